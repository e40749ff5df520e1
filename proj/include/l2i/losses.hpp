#pragma once

// The three loss terms and their gradient routing:
//   total = cls + lambda_cen * cen + lambda_latent * latent
// cls reaches theta_C only (latents detached), cen reaches theta_O and
// theta_E (through the target-domain latents), latent reaches theta_E only
// (centers detached).

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l2i/errors.hpp"
#include "l2i/model.hpp"
#include "l2i/tensor.hpp"

namespace l2i {

struct LossConfig {
    double lambda_cen = 100.0;
    double lambda_latent = 1.0;
    double r = 0.1;  // margin radius around each center
    double d = 1.9;  // minimum center separation

    /// Margin variants additionally need d > 2r so the hyperspheres cannot overlap.
    void validate(bool margins_enabled) const {
        if (!(r >= 0.0)) throw ConfigError("loss.r must be >= 0, got " + std::to_string(r));
        if (!(d > 0.0 && d <= 2.0)) throw ConfigError("loss.d must satisfy 0 < d <= 2, got " + std::to_string(d));
        if (margins_enabled && !(d > 2.0 * r)) {
            throw ConfigError("loss.d must exceed 2 * loss.r (d=" + std::to_string(d) + ", r=" + std::to_string(r) +
                              ")");
        }
        if (!std::isfinite(lambda_cen) || lambda_cen < 0.0) throw ConfigError("loss.lambda_cen must be >= 0");
        if (!std::isfinite(lambda_latent) || lambda_latent < 0.0) throw ConfigError("loss.lambda_latent must be >= 0");
    }
    bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
    double cls = 0.0;
    double cen = 0.0;
    double latent = 0.0;
    double total = 0.0;
};

/// Cross-entropy of a logit vector.
inline Tensor classification_loss(Graph& g, const Tensor& logits, std::size_t label) {
    return g.softmax_cross_entropy(logits, label);
}

enum class ClsRouting {
    ClassifierOnly,        // latents detached: gradient reaches theta_C only
    EncoderAndClassifier,  // plain end-to-end cross-entropy
};

/// Mean (optionally per-sample weighted) cross-entropy over latent rows.
inline Tensor classification_loss(Graph& g, const Model& model, const Tensor& latents,
                                  std::span<const std::size_t> labels, ClsRouting routing,
                                  std::span<const double> weights = {}) {
    const Tensor input = routing == ClsRouting::ClassifierOnly ? latents.detach() : latents;
    Tensor per_row = g.cross_entropy_rows(model.logits(g, input), labels);
    if (!weights.empty()) {
        if (weights.size() != labels.size()) throw DimensionError("classification_loss: weight count mismatch");
        per_row = g.mul(per_row, Tensor::vector({weights.begin(), weights.end()}));
    }
    return g.mean(per_row);
}

/// max(|a_k - b_k| - r, 0)^2 per row pair.
inline Tensor hinge_distance_sq(Graph& g, const Tensor& a, const Tensor& b, double r) {
    return g.square(g.max_scalar(g.add_scalar(g.norm(g.sub(a, b)), -r), 0.0));
}

/// Center point loss summed over one target-domain latent per class:
///   sum_i [ max(|f_it - o_i| - r, 0)^2 + sum_{k != i} 1/2 max(d - |o_k - o_i|, 0)^2 ]
/// Row j of `target_latents` belongs to class `classes[j]`; every class must
/// appear exactly once. Each unordered center pair enters twice at weight 1/2.
inline Tensor center_point_loss(Graph& g, const Tensor& target_latents, std::span<const std::size_t> classes,
                                const Tensor& centers, const LossConfig& cfg) {
    const std::size_t n = centers.rows();
    if (target_latents.rows() != classes.size() || classes.size() != n) {
        throw SamplerContractError("center_point_loss: need exactly one target latent per class (" +
                                   std::to_string(n) + " classes, " + std::to_string(classes.size()) + " given)");
    }
    std::vector<bool> seen(n, false);
    for (auto c : classes) {
        if (c >= n) throw IndexError("center_point_loss: class " + std::to_string(c) + " out of range");
        if (seen[c]) throw SamplerContractError("center_point_loss: class " + std::to_string(c) + " appears twice");
        seen[c] = true;
    }
    const Tensor pull = g.sum(hinge_distance_sq(g, target_latents, g.gather_rows(centers, classes), cfg.r));

    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) {
                first.push_back(k);
                second.push_back(i);
            }
    const Tensor gap = g.norm(g.sub(g.gather_rows(centers, first), g.gather_rows(centers, second)));
    const Tensor push = g.scale(g.sum(g.square(g.max_scalar(g.add_scalar(g.scale(gap, -1.0), cfg.d), 0.0))), 0.5);
    return g.add(pull, push);
}

/// Mean over rows of max(|f - o_label| - r, 0)^2; centers are detached.
inline Tensor latent_loss(Graph& g, const Tensor& latents, std::span<const std::size_t> labels,
                          const Tensor& centers, const LossConfig& cfg) {
    if (labels.size() != latents.rows()) throw DimensionError("latent_loss: label count mismatch");
    for (auto c : labels)
        if (c >= centers.rows()) throw IndexError("latent_loss: label " + std::to_string(c) + " out of range");
    const Tensor fixed = centers.detach();
    return g.mean(hinge_distance_sq(g, latents, g.gather_rows(fixed, labels), cfg.r));
}

/// Weighted sum of the three terms. A term weighted by zero is left out of
/// the graph entirely, so it contributes exactly nothing to any gradient.
inline std::pair<Tensor, LossBreakdown> total_loss(Graph& g, const Tensor& cls, const Tensor& cen,
                                                   const Tensor& latent, const LossConfig& cfg) {
    auto checked = [](const Tensor& t, const char* name) {
        if (t.size() != 1) throw ContractError(std::string("total_loss: ") + name + " is not scalar");
        if (!std::isfinite(t.item())) throw NumericalError(std::string("non-finite ") + name + " loss");
        return t.item();
    };
    LossBreakdown b;
    b.cls = checked(cls, "cls");
    b.cen = checked(cen, "cen");
    b.latent = checked(latent, "latent");
    Tensor total = cls;
    if (cfg.lambda_cen != 0.0) total = g.add(total, g.scale(cen, cfg.lambda_cen));
    if (cfg.lambda_latent != 0.0) total = g.add(total, g.scale(latent, cfg.lambda_latent));
    b.total = total.item();
    if (!std::isfinite(b.total)) throw NumericalError("non-finite total loss");
    return {total, b};
}

}  // namespace l2i
