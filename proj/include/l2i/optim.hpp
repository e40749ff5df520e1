#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "l2i/errors.hpp"
#include "l2i/tensor.hpp"

namespace l2i {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 5e-5;
    double lr_O = 1e-4;
    double lr_EC = 5e-5;
    double eps = 1e-8;

    void validate() const {
        if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in (0, 1)");
        if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in (0, 1)");
        if (!(lr_O > 0.0)) throw ConfigError("optimizer.lr_O must be > 0");
        if (!(lr_EC > 0.0)) throw ConfigError("optimizer.lr_EC must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
        if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
    }
    bool operator==(const OptimizerConfig&) const = default;
};

/// Moment buffers for one parameter group.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t t = 0;
};

/// One Adam step with bias correction over a parameter group. Weight decay
/// is coupled: decay * theta is added to the gradient before the moment
/// updates. With `skip_untouched`, tensors whose gradient is identically zero
/// are left alone (no decay, no moment update), and a group with no gradient
/// at all does not advance the step counter.
inline void adam_step(std::span<Tensor> params, AdamState& state, const OptimizerConfig& cfg, double lr,
                      double weight_decay, bool skip_untouched = false) {
    auto untouched = [](const Tensor& t) {
        return std::all_of(t.grad().begin(), t.grad().end(), [](double x) { return x == 0.0; });
    };
    if (skip_untouched && std::all_of(params.begin(), params.end(), untouched)) return;
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: parameter group changed shape");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (skip_untouched && untouched(params[k])) continue;
        auto theta = params[k].mutable_values();
        const auto grad = params[k].grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + weight_decay * theta[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Rescales every row of a matrix to unit norm.
inline void project_rows_to_sphere(Tensor& t) {
    const std::size_t rows = t.rows(), cols = t.cols();
    auto v = t.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c] * v[r * cols + c];
        const double n = std::sqrt(s);
        if (!(n > kNormEpsilon)) throw DegenerateVectorError("center point collapsed to zero norm");
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= n;
    }
}

}  // namespace l2i
