#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "l2i/optim.hpp"
#include "l2i/trainer.hpp"
#include "support.hpp"

using namespace l2i;
using namespace l2i::testing;

namespace {

std::size_t encoder_count(const Model& m) { return m.params().encoder.size(); }

EarlyStopConfig quick_stop(std::size_t max_steps, std::size_t interval = 25, std::size_t patience = 20) {
    EarlyStopConfig e;
    e.max_steps = max_steps;
    e.eval_interval = interval;
    e.patience = patience;
    return e;
}

}  // namespace

TEST(Optim, FirstAdamStepMovesByLearningRate) {
    Tensor p = Tensor::vector({1.0, -2.0, 0.5}, true);
    p.mutable_grad()[0] = 3.0;
    p.mutable_grad()[1] = -0.01;
    p.mutable_grad()[2] = 1e3;
    AdamState state;
    OptimizerConfig cfg;
    std::vector<Tensor> group{p};
    adam_step(group, state, cfg, 1e-3, 0.0);
    // With bias correction the first step is lr * g / (|g| + eps').
    EXPECT_NEAR(p.at(0), 1.0 - 1e-3, 1e-9);
    EXPECT_NEAR(p.at(1), -2.0 + 1e-3, 1e-8);
    EXPECT_NEAR(p.at(2), 0.5 - 1e-3, 1e-9);
    EXPECT_EQ(state.t, 1u);
}

TEST(Optim, AdamMatchesReferenceRecurrence) {
    OptimizerConfig cfg;
    Tensor p = Tensor::vector({0.3}, true);
    std::vector<Tensor> group{p};
    AdamState state;
    double theta = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 50; ++t) {
        const double grad = std::sin(0.3 * t) + 0.1;
        p.zero_grad();
        p.mutable_grad()[0] = grad;
        adam_step(group, state, cfg, 1e-2, 5e-5);
        const double g = grad + 5e-5 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        theta -= 1e-2 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(p.at(0), theta, 1e-14);
    }
}

TEST(Optim, UntouchedGroupIsSkipped) {
    Tensor p = Tensor::vector({1.0, 2.0}, true);
    std::vector<Tensor> group{p};
    AdamState state;
    adam_step(group, state, OptimizerConfig{}, 1e-3, 0.1, true);
    EXPECT_EQ(p.at(0), 1.0);
    EXPECT_EQ(state.t, 0u);
    adam_step(group, state, OptimizerConfig{}, 1e-3, 0.1, false);
    EXPECT_NE(p.at(0), 1.0);  // decay alone moves it
}

TEST(Optim, ProjectRowsToSphere) {
    Tensor t = Tensor::matrix(2, 2, {3.0, 4.0, 0.0, -2.0});
    project_rows_to_sphere(t);
    EXPECT_DOUBLE_EQ(t.at(0, 0), 0.6);
    EXPECT_DOUBLE_EQ(t.at(1, 1), -1.0);
    Tensor z = Tensor::matrix(1, 2, {0.0, 0.0});
    EXPECT_THROW(project_rows_to_sphere(z), DegenerateVectorError);
}

TEST(Trainer, VariantNamesRoundTrip) {
    for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_EQ(parse_variant("no-margin"), Variant::NoMargin);
    EXPECT_EQ(parse_variant("class_aware"), Variant::ClassAware);
    EXPECT_THROW(parse_variant("dann"), ConfigError);
}

TEST(Trainer, EffectiveLossConfig) {
    LossConfig base;
    const auto nm = effective_loss_config(Variant::NoMargin, base);
    EXPECT_EQ(nm.d, 2.0);
    EXPECT_EQ(nm.r, 0.0);
    EXPECT_EQ(nm.lambda_cen, 100.0);
    const auto van = effective_loss_config(Variant::Vanilla, base);
    EXPECT_EQ(van.lambda_cen, 0.0);
    EXPECT_EQ(van.lambda_latent, 0.0);
    EXPECT_EQ(effective_loss_config(Variant::L2I, base).d, 1.9);
}

TEST(Trainer, RoutingOfTheFullStep) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto [model, data] = random_step(seed);
        const LossConfig loss;
        const auto all = term_grads(model, data, loss, {});
        const auto cls = term_grads(model, data, loss, {true, false, false});
        const auto cen = term_grads(model, data, loss, {false, true, false});
        const auto enc = term_grads(model, data, loss, {false, true, true});
        const std::size_t ne = encoder_count(model), nc = 2;
        for (std::size_t i = 0; i < ne; ++i) {
            EXPECT_EQ(all[i], enc[i]) << "encoder tensor " << i;
            EXPECT_TRUE(all_zero(cls[i]));
        }
        for (std::size_t i = ne; i < ne + nc; ++i) {
            EXPECT_EQ(all[i], cls[i]) << "classifier tensor " << i;
            EXPECT_TRUE(all_zero(cen[i]));
            EXPECT_TRUE(all_zero(enc[i]));
        }
        EXPECT_EQ(all.back(), cen.back());
        EXPECT_TRUE(all_zero(cls.back()));
        const auto lat = term_grads(model, data, loss, {false, false, true});
        EXPECT_TRUE(all_zero(lat.back()));
    }
}

TEST(Trainer, StepGradientsMatchFiniteDifferences) {
    const LossConfig loss;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto [model, data] = random_step(seed + 10);
        auto objective = [&, &model = model, &data = data](LossTerms terms) {
            return [&, terms](Graph& g) { return step_objective(g, model, data, Variant::L2I, loss, terms).first; };
        };
        auto& p = model.params();
        for (auto& t : p.classifier) EXPECT_LT(finite_difference_check(objective({true, false, false}), t, 1e-5), 1e-4);
        EXPECT_LT(finite_difference_check(objective({false, true, false}), p.centers, 1e-5), 1e-4);
        for (auto& t : p.encoder) {
            EXPECT_LT(finite_difference_check(objective({false, true, false}), t, 1e-5), 1e-4);
            EXPECT_LT(finite_difference_check(objective({false, false, true}), t, 1e-5), 1e-4);
            EXPECT_LT(finite_difference_check(objective({false, true, true}), t, 1e-5), 1e-4);
        }
    }
}

TEST(Trainer, VanillaStepLeavesCentersAndRoutesThroughEncoder) {
    auto [model, data] = random_step(3);
    const auto before = values_of(model.params());
    OptimizerState opt;
    train_step(model, opt, data, Variant::Vanilla, LossConfig{}, OptimizerConfig{});
    const auto after = values_of(model.params());
    EXPECT_EQ(before.back(), after.back());
    EXPECT_NE(before.front(), after.front());
    EXPECT_TRUE(all_zero(std::vector<double>(model.params().centers.grad().begin(), model.params().centers.grad().end())));
}

TEST(Trainer, ZeroLambdasChangeClassifierOnly) {
    auto [model, data] = random_step(4);
    LossConfig loss;
    loss.lambda_cen = loss.lambda_latent = 0.0;
    const auto before = values_of(model.params());
    OptimizerState opt;
    train_step(model, opt, data, Variant::L2I, loss, OptimizerConfig{});
    const auto after = values_of(model.params());
    const std::size_t ne = encoder_count(model);
    for (std::size_t i = 0; i < ne; ++i) EXPECT_EQ(before[i], after[i]);
    EXPECT_NE(before[ne], after[ne]);
    EXPECT_EQ(before.back(), after.back());
}

TEST(Trainer, CentersStayOnSphere) {
    auto [model, data] = random_step(5);
    DatasetConfig dc;
    const auto train = select_split(generate_dataset(dc), Split::Train);
    BatchSampler sampler(train, 2);
    std::mt19937_64 rng(5);
    OptimizerState opt;
    OptimizerConfig oc;
    oc.lr_O = 0.05;  // large steps stress the re-projection
    for (int step = 0; step < 200; ++step) {
        train_step(model, opt, make_step_data(train, sampler.draw(rng)), Variant::L2I, LossConfig{}, oc);
        const Tensor& o = model.params().centers;
        for (std::size_t r = 0; r < o.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < o.cols(); ++c) s += o.at(r, c) * o.at(r, c);
            ASSERT_NEAR(std::sqrt(s), 1.0, 1e-9);
        }
    }
}

TEST(Trainer, EarlyStoppingCounter) {
    EarlyStopping s(3);
    EXPECT_TRUE(s.observe(1.0));
    EXPECT_FALSE(s.observe(1.0));  // ties do not improve
    EXPECT_FALSE(s.observe(2.0));
    EXPECT_FALSE(s.should_stop());
    EXPECT_TRUE(s.observe(0.5));
    EXPECT_EQ(s.best_index(), 3u);
    EXPECT_FALSE(s.observe(0.6));
    EXPECT_FALSE(s.observe(0.7));
    EXPECT_FALSE(s.observe(0.8));
    EXPECT_TRUE(s.should_stop());
}

TEST(Trainer, StrictlyWorseningValidationRestoresInitialModel) {
    const Dataset data = generate_dataset(DatasetConfig{});
    Model init(ModelConfig{8, {16}, 4, 2, 1});
    TrainConfig cfg;
    cfg.early_stop = quick_stop(5000, 5, 20);
    const auto result = train(init.clone(), data, cfg, [](const Model&, std::size_t step) { return double(step); });
    EXPECT_TRUE(result.early_stopped);
    EXPECT_EQ(result.evaluations, 20u);
    EXPECT_EQ(result.best_step, 0u);
    EXPECT_EQ(result.steps, 100u);
    EXPECT_EQ(values_of(result.model.params()), values_of(init.params()));
}

TEST(Trainer, RestoredModelReproducesBestValidationLoss) {
    const Dataset data = generate_dataset(DatasetConfig{});
    std::vector<Sample> val;
    for (const auto& s : data)
        if (s.split == Split::Val && s.domain_role == DomainRole::Target) val.push_back(s);
    for (Variant v : {Variant::L2I, Variant::Vanilla}) {
        TrainConfig cfg;
        cfg.variant = v;
        cfg.early_stop = quick_stop(300, 25);
        const auto result = train(Model(ModelConfig{8, {16}, 4, 2, 2}), data, cfg);
        EXPECT_EQ(validation_loss(result.model, val, v, cfg.loss), result.best_val);
        double best = INFINITY;
        for (const auto& row : result.log)
            if (row.val_loss) best = std::min(best, *row.val_loss);
        EXPECT_EQ(best, result.best_val);
    }
}

TEST(Trainer, FixedVariantFreezesAntipodalCenters) {
    const Dataset data = generate_dataset(DatasetConfig{});
    TrainConfig cfg;
    cfg.variant = Variant::Fixed;
    cfg.early_stop = quick_stop(200);
    const auto result = train(Model(ModelConfig{8, {16}, 4, 2, 3}), data, cfg);
    const Tensor expected = fixed_center_points(2, 4);
    EXPECT_TRUE(std::equal(expected.values().begin(), expected.values().end(),
                           result.model.params().centers.values().begin()));
}

TEST(Trainer, TrainingIsDeterministic) {
    const Dataset data = generate_dataset(DatasetConfig{});
    TrainConfig cfg;
    cfg.early_stop = quick_stop(150);
    cfg.seed = 77;
    auto a = train(Model(ModelConfig{8, {16}, 4, 2, 4}), data, cfg);
    auto b = train(Model(ModelConfig{8, {16}, 4, 2, 4}), data, cfg);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
        EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
    }
    EXPECT_EQ(values_of(a.model.params()), values_of(b.model.params()));
}

TEST(Trainer, LossDecreasesOnDefaultBenchmark) {
    const Dataset data = generate_dataset(DatasetConfig{});
    for (Variant v : {Variant::L2I, Variant::Vanilla}) {
        TrainConfig cfg;
        cfg.variant = v;
        cfg.early_stop = quick_stop(200, 1000);
        const auto result = train(Model(ModelConfig{}), data, cfg);
        std::vector<double> totals;
        for (const auto& row : result.log)
            if (row.step > 0) totals.push_back(row.loss.total);
        ASSERT_EQ(totals.size(), 200u);
        const double first = std::accumulate(totals.begin(), totals.begin() + 20, 0.0) / 20.0;
        const double last = std::accumulate(totals.end() - 20, totals.end(), 0.0) / 20.0;
        EXPECT_LT(last, first) << to_string(v);
    }
}

TEST(Trainer, EveryVariantTrains) {
    const Dataset data = generate_dataset(DatasetConfig{});
    for (Variant v : kAllVariants) {
        TrainConfig cfg;
        cfg.variant = v;
        cfg.early_stop = quick_stop(100);
        EXPECT_NO_THROW(train(Model(ModelConfig{8, {16}, 4, 2, 5}), data, cfg)) << to_string(v);
    }
}

TEST(Trainer, NeedsTargetValidationData) {
    Dataset data = generate_dataset(DatasetConfig{});
    for (auto& s : data)
        if (s.split == Split::Val && s.domain_role == DomainRole::Target) s.split = Split::Test;
    EXPECT_THROW(train(Model(ModelConfig{}), data, TrainConfig{}), ConfigError);
}

TEST(Trainer, EvaluateFilters) {
    const Dataset data = generate_dataset(DatasetConfig{});
    const auto test = select_split(data, Split::Test);
    const Model model(ModelConfig{});
    const auto t = evaluate(model, test, DomainFilter::Target);
    const auto s = evaluate(model, test, DomainFilter::Source);
    const auto a = evaluate(model, test, DomainFilter::All);
    EXPECT_EQ(a.n_samples, t.n_samples + s.n_samples);
    EXPECT_EQ(t.n_samples, 14u);
    std::vector<Sample> source_only;
    for (const auto& x : test)
        if (x.domain_role == DomainRole::Source) source_only.push_back(x);
    EXPECT_THROW(evaluate(model, source_only, DomainFilter::Target), ConfigError);
}
