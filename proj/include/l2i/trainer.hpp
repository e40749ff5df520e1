#pragma once

// Training variants, the per-step objective with its gradient routing,
// Adam over the three parameter groups, early stopping on the target-domain
// validation loss, and test-set evaluation.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "l2i/data.hpp"
#include "l2i/errors.hpp"
#include "l2i/losses.hpp"
#include "l2i/metrics.hpp"
#include "l2i/model.hpp"
#include "l2i/optim.hpp"
#include "l2i/tensor.hpp"

namespace l2i {

enum class Variant { L2I, Vanilla, ClassAware, Weighted, Fixed, NoMargin };

inline constexpr Variant kAllVariants[] = {Variant::Vanilla, Variant::ClassAware, Variant::Weighted,
                                           Variant::L2I,     Variant::Fixed,      Variant::NoMargin};

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::L2I: return "L2I";
        case Variant::Vanilla: return "Vanilla";
        case Variant::ClassAware: return "ClassAware";
        case Variant::Weighted: return "Weighted";
        case Variant::Fixed: return "Fixed";
        case Variant::NoMargin: return "NoMargin";
    }
    return "?";
}

inline Variant parse_variant(std::string_view name) {
    std::string key;
    for (char c : name)
        if (c != '-' && c != '_' && c != ' ') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    for (Variant v : kAllVariants) {
        std::string canon;
        for (char c : std::string_view(to_string(v))) canon.push_back(static_cast<char>(std::tolower(c)));
        if (key == canon) return v;
    }
    throw ConfigError("unknown variant '" + std::string(name) + "'");
}

/// Variants built on the center point and latent losses.
inline bool uses_centers(Variant v) { return v == Variant::L2I || v == Variant::Fixed || v == Variant::NoMargin; }
/// Variants whose hypersphere margins (r > 0, d < 2) are in effect.
inline bool uses_margins(Variant v) { return v == Variant::L2I || v == Variant::Fixed; }

/// Loss weights and margins a variant actually trains with.
inline LossConfig effective_loss_config(Variant v, LossConfig base) {
    if (v == Variant::NoMargin) {
        base.d = 2.0;
        base.r = 0.0;
    }
    if (!uses_centers(v)) {
        base.lambda_cen = 0.0;
        base.lambda_latent = 0.0;
    }
    return base;
}

struct EarlyStopConfig {
    std::size_t patience = 20;
    std::size_t eval_interval = 25;
    std::size_t max_steps = 5000;

    void validate() const {
        if (patience < 1) throw ConfigError("early_stop.patience must be >= 1");
        if (eval_interval < 1) throw ConfigError("early_stop.eval_interval must be >= 1");
    }
    bool operator==(const EarlyStopConfig&) const = default;
};

/// Patience counter over a stream of validation losses (lower is better).
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Returns true when `value` improves on every earlier value.
    bool observe(double value) {
        ++evaluations_;
        if (evaluations_ == 1 || value < best_) {
            best_ = value;
            best_index_ = evaluations_ - 1;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }
    bool should_stop() const noexcept { return since_best_ >= patience_; }
    double best() const noexcept { return best_; }
    std::size_t best_index() const noexcept { return best_index_; }
    std::size_t evaluations() const noexcept { return evaluations_; }
    std::size_t since_best() const noexcept { return since_best_; }

private:
    std::size_t patience_;
    std::size_t evaluations_ = 0;
    std::size_t since_best_ = 0;
    std::size_t best_index_ = 0;
    double best_ = 0.0;
};

struct TrainConfig {
    Variant variant = Variant::L2I;
    LossConfig loss;
    OptimizerConfig optimizer;
    EarlyStopConfig early_stop;
    std::uint64_t seed = 0;  // batch stream
};

/// Selects which loss terms enter the objective (routing diagnostics).
struct LossTerms {
    bool cls = true;
    bool cen = true;
    bool latent = true;
};

/// Tensors for one optimisation step.
struct StepData {
    Tensor x;                                 // [B x D] random part
    std::vector<std::size_t> labels;
    std::vector<double> weights;              // per-sample cls weights, empty = unweighted
    Tensor x_target;                          // [n x D] one target sample per class
    std::vector<std::size_t> target_classes;
};

inline Tensor stack_features(std::span<const Sample> samples, std::span<const std::size_t> index) {
    if (index.empty()) throw DimensionError("stack_features: empty selection");
    const std::size_t dim = samples[index[0]].x.size();
    std::vector<double> v;
    v.reserve(index.size() * dim);
    for (auto i : index) {
        if (samples[i].x.size() != dim) throw DimensionError("stack_features: ragged feature vectors");
        v.insert(v.end(), samples[i].x.begin(), samples[i].x.end());
    }
    return Tensor::matrix(index.size(), dim, std::move(v));
}

inline StepData make_step_data(std::span<const Sample> train, const Batch& batch,
                               std::span<const double> sample_weights = {}) {
    StepData d;
    d.x = stack_features(train, batch.random_part);
    for (auto i : batch.random_part) {
        d.labels.push_back(train[i].class_label);
        if (!sample_weights.empty()) d.weights.push_back(sample_weights[i]);
    }
    if (!batch.center_part.empty()) {
        d.x_target = stack_features(train, batch.center_part);
        for (auto i : batch.center_part) {
            if (train[i].domain_role != DomainRole::Target) {
                throw SamplerContractError("center part holds a source-domain sample");
            }
            d.target_classes.push_back(train[i].class_label);
        }
    }
    return d;
}

/// Builds the step objective for `variant`. `loss` must already be the
/// variant's effective configuration.
///
/// Center variants: cls is the mean cross-entropy over the random part with
/// latents detached (theta_C only), latent is the mean hinge over the random
/// part with centers detached (theta_E only), cen is summed over the per-class
/// target samples (theta_O and theta_E). Other variants: plain, optionally
/// weighted, cross-entropy through encoder and classifier.
inline std::pair<Tensor, LossBreakdown> step_objective(Graph& g, const Model& model, const StepData& data,
                                                       Variant variant, const LossConfig& loss,
                                                       LossTerms terms = {}) {
    const Tensor zero = Tensor::scalar(0.0);
    const Tensor latents = model.encode(g, data.x);
    if (!uses_centers(variant)) {
        Tensor cls = terms.cls ? classification_loss(g, model, latents, data.labels, ClsRouting::EncoderAndClassifier,
                                                     data.weights)
                               : zero;
        return total_loss(g, cls, zero, zero, loss);
    }
    Tensor cls = terms.cls ? classification_loss(g, model, latents, data.labels, ClsRouting::ClassifierOnly) : zero;
    Tensor latent = terms.latent ? latent_loss(g, latents, data.labels, model.params().centers, loss) : zero;
    Tensor cen = zero;
    if (terms.cen) {
        if (!data.x_target.defined()) throw SamplerContractError("center variants need per-class target samples");
        cen = center_point_loss(g, model.encode(g, data.x_target), data.target_classes, model.params().centers, loss);
    }
    return total_loss(g, cls, cen, latent, loss);
}

/// Adam moments for the encoder, classifier and center groups.
struct OptimizerState {
    AdamState encoder;
    AdamState classifier;
    AdamState centers;
};


/// Applies one optimiser update from the gradients currently held by the
/// model (tensors without gradient are skipped): encoder and classifier at lr_EC with weight decay, centers at lr_O
/// without decay followed by re-projection onto the unit sphere.
inline void apply_update(Model& model, OptimizerState& opt, const OptimizerConfig& cfg, bool update_centers) {
    auto& p = model.params();
    adam_step(p.encoder, opt.encoder, cfg, cfg.lr_EC, cfg.weight_decay, true);
    adam_step(p.classifier, opt.classifier, cfg, cfg.lr_EC, cfg.weight_decay, true);
    const auto g = p.centers.grad();
    if (update_centers && std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; })) {
        std::vector<Tensor> group{p.centers};
        adam_step(group, opt.centers, cfg, cfg.lr_O, 0.0, true);
        project_rows_to_sphere(p.centers);
    }
}

/// One optimisation step; returns the loss breakdown before the update.
inline LossBreakdown train_step(Model& model, OptimizerState& opt, const StepData& data, Variant variant,
                                const LossConfig& base_loss, const OptimizerConfig& cfg) {
    const LossConfig loss = effective_loss_config(variant, base_loss);
    model.params().zero_grad();
    Graph g;
    auto [total, breakdown] = step_objective(g, model, data, variant, loss);
    g.backward(total);
    const bool learn_centers = uses_centers(variant) && variant != Variant::Fixed;
    apply_update(model, opt, cfg, learn_centers);
    return breakdown;
}

/// Target-domain validation objective. Center variants use the full total
/// loss: cls and latent averaged over the samples, the pull term of cen
/// averaged within each class and summed over classes, plus the center
/// separation term. Other variants use the mean cross-entropy.
inline double validation_loss(const Model& model, std::span<const Sample> val, Variant variant,
                              const LossConfig& base_loss) {
    if (val.empty()) throw ConfigError("validation set is empty");
    const LossConfig loss = effective_loss_config(variant, base_loss);
    Graph g(false);
    std::vector<std::size_t> all(val.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> labels;
    for (const auto& s : val) labels.push_back(s.class_label);
    const Tensor latents = model.encode(g, stack_features(val, all));
    const double cls = g.mean(g.cross_entropy_rows(model.logits(g, latents), labels)).item();
    if (!uses_centers(variant)) return cls;

    const Tensor& centers = model.params().centers;
    const double latent = latent_loss(g, latents, labels, centers, loss).item();
    double cen = 0.0;
    const std::size_t n = centers.rows();
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < val.size(); ++i)
            if (labels[i] == c) rows.push_back(i);
        if (rows.empty()) continue;
        const std::vector<std::size_t> same(rows.size(), c);
        cen += g.mean(hinge_distance_sq(g, g.gather_rows(latents, rows), g.gather_rows(centers, same), loss.r)).item();
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            if (i == k) continue;
            double d2 = 0.0;
            for (std::size_t c = 0; c < centers.cols(); ++c) {
                const double diff = centers.at(k, c) - centers.at(i, c);
                d2 += diff * diff;
            }
            const double gap = std::max(loss.d - std::sqrt(d2), 0.0);
            cen += 0.5 * gap * gap;
        }
    return cls + loss.lambda_cen * cen + loss.lambda_latent * latent;
}

struct TrainLogRow {
    std::size_t step = 0;  // updates applied before this row's validation (0 = initial model)
    LossBreakdown loss;
    std::optional<double> val_loss;
};

struct TrainResult {
    Model model;
    std::vector<TrainLogRow> log;
    double best_val = 0.0;
    std::size_t best_step = 0;
    std::size_t steps = 0;
    std::size_t evaluations = 0;  // after the reference evaluation of the initial model
    bool early_stopped = false;
};

/// Overrides the validation quantity; receives the model and the step index.
using ValidationFn = std::function<double(const Model&, std::size_t)>;

/// Trains until patience is exhausted or max_steps updates have run, then
/// restores the parameters with the lowest validation loss. Validation runs on
/// the initial model and after every eval_interval updates.
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, ValidationFn validate = {}) {
    cfg.early_stop.validate();
    cfg.optimizer.validate();
    cfg.loss.validate(uses_margins(cfg.variant));
    const auto train_set = select_split(data, Split::Train);
    std::vector<Sample> val_target;
    for (const auto& s : data)
        if (s.split == Split::Val && s.domain_role == DomainRole::Target) val_target.push_back(s);
    if (val_target.empty()) throw ConfigError("training needs target-domain validation samples");
    if (!validate) {
        validate = [&](const Model& m, std::size_t) { return validation_loss(m, val_target, cfg.variant, cfg.loss); };
    }

    const std::size_t n = model.config().num_classes;
    if (cfg.variant == Variant::Fixed) {
        const Tensor fixed = fixed_center_points(n, model.config().latent_dim);
        std::copy(fixed.values().begin(), fixed.values().end(), model.params().centers.mutable_values().begin());
    }
    std::optional<BatchSampler> sampler;
    std::optional<ClassAwareSampler> class_aware;
    if (cfg.variant == Variant::ClassAware) {
        class_aware.emplace(train_set, n);
    } else {
        sampler.emplace(train_set, n);
    }
    const std::vector<double> weights =
        cfg.variant == Variant::Weighted ? class_domain_weights(train_set) : std::vector<double>{};

    std::mt19937_64 rng(cfg.seed);
    OptimizerState opt;
    EarlyStopping stopper(cfg.early_stop.patience);
    TrainResult result{model.clone(), {}, 0.0, 0, 0, 0, false};

    auto evaluate_at = [&](std::size_t step) {
        const double v = validate(model, step);
        if (!std::isfinite(v)) throw NumericalError("non-finite validation loss at step " + std::to_string(step));
        if (stopper.observe(v)) {
            result.model.params().assign_values(model.params());
            result.best_step = step;
        }
        return v;
    };

    result.log.push_back({0, {}, evaluate_at(0)});
    for (std::size_t step = 1; step <= cfg.early_stop.max_steps; ++step) {
        const Batch batch = class_aware ? class_aware->draw(rng) : sampler->draw(rng);
        LossBreakdown b;
        try {
            b = train_step(model, opt, make_step_data(train_set, batch, weights), cfg.variant, cfg.loss, cfg.optimizer);
        } catch (const NumericalError& e) {
            throw NumericalError("step " + std::to_string(step) + ": " + e.what());
        }
        TrainLogRow row{step, b, std::nullopt};
        result.steps = step;
        if (step % cfg.early_stop.eval_interval == 0) row.val_loss = evaluate_at(step);
        result.log.push_back(row);
        if (stopper.should_stop()) {
            result.early_stopped = true;
            break;
        }
    }
    result.best_val = stopper.best();
    result.evaluations = stopper.evaluations() - 1;
    return result;
}

enum class DomainFilter { Source, Target, All };

inline const char* to_string(DomainFilter f) {
    switch (f) {
        case DomainFilter::Source: return "source";
        case DomainFilter::Target: return "target";
        case DomainFilter::All: return "all";
    }
    return "?";
}

/// Accuracy, kappa and AUROC (class-1 softmax score) on the filtered samples.
inline MetricScores evaluate(const Model& model, std::span<const Sample> samples, DomainFilter filter) {
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool keep = filter == DomainFilter::All ||
                          (filter == DomainFilter::Target) == (samples[i].domain_role == DomainRole::Target);
        if (keep) index.push_back(i);
    }
    if (index.empty()) throw ConfigError(std::string("evaluate: no ") + to_string(filter) + " samples");
    Graph g(false);
    const Tensor z = model.logits(g, model.encode(g, stack_features(samples, index)));
    const std::size_t k = z.cols();
    std::vector<std::size_t> pred, truth;
    std::vector<double> prob1;
    for (std::size_t r = 0; r < index.size(); ++r) {
        const auto p = softmax(z.values().subspan(r * k, k));
        pred.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
        prob1.push_back(p.size() > 1 ? p[1] : 0.0);
        truth.push_back(samples[index[r]].class_label);
    }
    return score(pred, prob1, truth);
}

}  // namespace l2i
