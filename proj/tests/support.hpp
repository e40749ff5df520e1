#pragma once

// Shared fixtures for the test binaries.

#include <random>
#include <vector>

#include "l2i/data.hpp"
#include "l2i/model.hpp"
#include "l2i/trainer.hpp"

namespace l2i::testing {

struct StepFixture {
    Model model;
    StepData data;
};

/// A small model and one two-part batch from the default benchmark.
inline StepFixture random_step(std::uint64_t seed, std::size_t latent_dim = 6) {
    DatasetConfig dc;
    dc.seed = seed;
    static thread_local std::vector<Sample> train;
    train = select_split(generate_dataset(dc), Split::Train);
    Model model(ModelConfig{dc.feature_dim, {12, 10}, latent_dim, 2, seed + 1000});
    std::mt19937_64 rng(seed);
    const Batch batch = BatchSampler(train, 2).draw(rng);
    return {std::move(model), make_step_data(train, batch)};
}

inline std::vector<std::vector<double>> grads_of(const ModelParams& p) {
    std::vector<std::vector<double>> out;
    for (const auto& t : p.encoder) out.emplace_back(t.grad().begin(), t.grad().end());
    for (const auto& t : p.classifier) out.emplace_back(t.grad().begin(), t.grad().end());
    out.emplace_back(p.centers.grad().begin(), p.centers.grad().end());
    return out;
}

inline std::vector<std::vector<double>> values_of(const ModelParams& p) {
    std::vector<std::vector<double>> out;
    for (const auto& t : p.encoder) out.emplace_back(t.values().begin(), t.values().end());
    for (const auto& t : p.classifier) out.emplace_back(t.values().begin(), t.values().end());
    out.emplace_back(p.centers.values().begin(), p.centers.values().end());
    return out;
}

/// Gradients of the chosen loss terms alone.
inline std::vector<std::vector<double>> term_grads(Model& model, const StepData& data, const LossConfig& loss,
                                                   LossTerms terms, Variant variant = Variant::L2I) {
    model.params().zero_grad();
    Graph g;
    auto [total, b] = step_objective(g, model, data, variant, loss, terms);
    g.backward(total);
    return grads_of(model.params());
}

inline bool all_zero(const std::vector<double>& v) {
    for (double x : v)
        if (x != 0.0) return false;
    return true;
}

}  // namespace l2i::testing
