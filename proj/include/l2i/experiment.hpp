#pragma once

// Seeded multi-run experiments, the variant suite with its result tables,
// and the 2-D latent projection dump.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "l2i/config.hpp"
#include "l2i/data.hpp"
#include "l2i/io.hpp"
#include "l2i/metrics.hpp"
#include "l2i/model.hpp"
#include "l2i/trainer.hpp"

namespace l2i {

enum class SeedStream : std::uint64_t { Dataset = 1, Model = 2, Batches = 3 };

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of one rng stream of one run. Variants share it, so every variant of
/// run k sees the same data split, initial weights and batch seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::size_t run, SeedStream stream) {
    return splitmix64(splitmix64(splitmix64(master) ^ static_cast<std::uint64_t>(run)) ^
                      static_cast<std::uint64_t>(stream));
}

struct RunSeeds {
    std::uint64_t dataset = 0;
    std::uint64_t model = 0;
    std::uint64_t batches = 0;
};

inline RunSeeds run_seeds(std::uint64_t master, std::size_t run) {
    return {derive_seed(master, run, SeedStream::Dataset), derive_seed(master, run, SeedStream::Model),
            derive_seed(master, run, SeedStream::Batches)};
}

inline DatasetConfig run_dataset_config(const ExperimentConfig& cfg, std::size_t run) {
    DatasetConfig d = cfg.dataset;
    d.seed = run_seeds(cfg.master_seed, run).dataset;
    return d;
}

inline ModelConfig run_model_config(const ExperimentConfig& cfg, std::size_t run) {
    ModelConfig m = cfg.model;
    m.input_dim = cfg.dataset.feature_dim;
    m.num_classes = cfg.dataset.num_classes;
    m.seed = run_seeds(cfg.master_seed, run).model;
    return m;
}

struct RunRecord {
    std::size_t run = 0;
    std::optional<MetricScores> target;
    std::optional<MetricScores> source;
    std::optional<TrainResult> training;
    std::string error;  // nonempty when the run failed
    bool ok() const { return error.empty(); }
};

struct ExperimentResult {
    Variant variant = Variant::L2I;
    std::vector<RunRecord> runs;

    std::size_t completed() const {
        return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const auto& r) { return r.ok(); }));
    }
    AggregateScores aggregate_domain(DomainRole role) const {
        std::vector<MetricScores> rows;
        for (const auto& r : runs)
            if (r.ok()) rows.push_back(role == DomainRole::Target ? *r.target : *r.source);
        return aggregate(rows);
    }
};

using ProgressFn = std::function<void(const std::string&)>;

inline RunRecord run_single(const ExperimentConfig& cfg, Variant variant, std::size_t run) {
    RunRecord rec;
    rec.run = run;
    try {
        const Dataset data = generate_dataset(run_dataset_config(cfg, run));
        TrainConfig tc{variant, cfg.loss, cfg.optimizer, cfg.early_stop, run_seeds(cfg.master_seed, run).batches};
        TrainResult trained = train(Model(run_model_config(cfg, run)), data, tc);
        const auto test = select_split(data, Split::Test);
        rec.target = evaluate(trained.model, test, DomainFilter::Target);
        rec.source = evaluate(trained.model, test, DomainFilter::Source);
        rec.training = std::move(trained);
    } catch (const std::exception& e) {
        rec.error = e.what();
        rec.target.reset();
        rec.source.reset();
        rec.training.reset();
    }
    return rec;
}

/// Runs `variant` cfg.n_runs times. A failing run is recorded and excluded
/// from aggregation.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Variant variant, const ProgressFn& progress = {}) {
    if (cfg.n_runs < 1) throw ConfigError("experiment.n_runs must be >= 1");
    ExperimentResult result{variant, {}};
    for (std::size_t run = 0; run < cfg.n_runs; ++run) {
        result.runs.push_back(run_single(cfg, variant, run));
        if (progress) {
            const auto& r = result.runs.back();
            std::ostringstream os;
            os << to_string(variant) << " run " << run << ": ";
            if (r.ok()) {
                os << "target acc " << std::fixed << std::setprecision(3) << r.target->accuracy << ", source acc "
                   << r.source->accuracy << ", " << r.training->steps << " steps";
            } else {
                os << "FAILED: " << r.error;
            }
            progress(os.str());
        }
    }
    if (progress && result.completed() < cfg.n_runs) {
        progress("warning: " + std::string(to_string(variant)) + " aggregated over " +
                 std::to_string(result.completed()) + " of " + std::to_string(cfg.n_runs) + " runs");
    }
    return result;
}

// ---- Tables -----------------------------------------------------------------

inline std::string results_csv(std::span<const ExperimentResult> results) {
    std::ostringstream os;
    os << "variant,run,domain,accuracy,kappa,auroc\n";
    for (const auto& ex : results) {
        for (const auto& r : ex.runs) {
            if (!r.ok()) continue;
            for (auto [name, m] : {std::pair{"target", &*r.target}, std::pair{"source", &*r.source}}) {
                os << to_string(ex.variant) << ',' << r.run << ',' << name << ',' << io::format_double(m->accuracy)
                   << ',' << io::format_double(m->kappa) << ',' << (m->auroc ? io::format_double(*m->auroc) : "")
                   << '\n';
            }
        }
    }
    return os.str();
}

namespace detail {
inline std::vector<std::string> summary_cells(const ExperimentResult& ex) {
    std::vector<std::string> cells;
    for (DomainRole role : {DomainRole::Target, DomainRole::Source}) {
        const auto agg = ex.aggregate_domain(role);
        cells.push_back(format_mean_std(agg.accuracy));
        cells.push_back(format_mean_std(agg.kappa));
        cells.push_back(format_mean_std(agg.auroc));
    }
    return cells;
}
}  // namespace detail

/// Aggregate table as CSV; score cells are "mean [std]" in percent.
inline std::string summary_csv(std::span<const ExperimentResult> results) {
    std::ostringstream os;
    os << "variant,runs,target_accuracy,target_kappa,target_auroc,source_accuracy,source_kappa,source_auroc\n";
    for (const auto& ex : results) {
        os << to_string(ex.variant) << ',' << ex.completed();
        for (const auto& c : detail::summary_cells(ex)) os << ',' << c;
        os << '\n';
    }
    return os.str();
}

/// Aggregate table as aligned markdown with Target/Source column groups.
inline std::string summary_markdown(std::span<const ExperimentResult> results) {
    std::vector<std::vector<std::string>> rows{
        {"", "Target", "", "", "Source", "", ""},
        {"Variant", "Accuracy", "Kappa", "AUROC", "Accuracy", "Kappa", "AUROC"},
    };
    for (const auto& ex : results) {
        std::vector<std::string> row{to_string(ex.variant)};
        for (auto& c : detail::summary_cells(ex)) row.push_back(std::move(c));
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(rows[0].size(), 3);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        os << '|';
        for (std::size_t c = 0; c < row.size(); ++c) os << ' ' << std::left << std::setw(int(width[c])) << row[c] << " |";
        os << '\n';
    };
    emit(rows[0]);
    os << '|';
    for (std::size_t w : width) os << std::string(w + 2, '-') << '|';
    os << '\n';
    for (std::size_t r = 1; r < rows.size(); ++r) emit(rows[r]);
    return os.str();
}

inline std::string training_log_csv(const TrainResult& t) {
    std::ostringstream os;
    os << "step,cls,cen,latent,total,val_loss\n";
    for (const auto& row : t.log) {
        os << row.step << ',' << io::format_double(row.loss.cls) << ',' << io::format_double(row.loss.cen) << ','
           << io::format_double(row.loss.latent) << ',' << io::format_double(row.loss.total) << ','
           << (row.val_loss ? io::format_double(*row.val_loss) : "") << '\n';
    }
    return os.str();
}

inline std::string run_metadata(const ExperimentConfig& cfg, std::span<const ExperimentResult> results) {
    std::ostringstream os;
    os << "# configuration\n" << emit_config(cfg) << "\n# training conventions\n"
       << "weight_decay_groups = encoder,classifier (center points are re-projected instead)\n"
       << "weight_decay_form = coupled\n"
       << "validation_quantity = total loss for center variants, cls loss for Vanilla/ClassAware/Weighted\n"
       << "checkpoint_restore = best validation\n"
       << "\n# seeds\n";
    for (std::size_t run = 0; run < cfg.n_runs; ++run) {
        const auto s = run_seeds(cfg.master_seed, run);
        os << "run." << run << " = dataset " << s.dataset << " model " << s.model << " batches " << s.batches << '\n';
    }
    os << "\n# runs\n";
    for (const auto& ex : results) {
        for (const auto& r : ex.runs) {
            os << to_string(ex.variant) << '.' << r.run << " = ";
            if (r.ok()) {
                os << "steps " << r.training->steps << " best_step " << r.training->best_step << " best_val "
                   << io::format_double(r.training->best_val) << (r.training->early_stopped ? " early_stopped" : "");
            } else {
                os << "failed: " << r.error;
            }
            os << '\n';
        }
    }
    return os.str();
}

struct SuiteResult {
    std::vector<ExperimentResult> experiments;
    std::vector<std::string> failed_variants;  // variants without a single completed run
    bool ok() const { return failed_variants.empty(); }
};

/// Runs every configured variant and writes, under cfg.output_dir:
/// results.csv, summary.csv, summary.md, metadata.txt,
/// logs/<variant>_run<k>.csv and checkpoints/<variant>_run<k>.ckpt.
inline SuiteResult run_suite(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    const std::filesystem::path out = cfg.output_dir;
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec || !std::filesystem::is_directory(out)) {
        throw ConfigError("experiment.output_dir is not writable: " + out.string());
    }
    SuiteResult suite;
    for (Variant v : cfg.variants) {
        auto ex = run_experiment(cfg, v, progress);
        for (const auto& r : ex.runs) {
            if (!r.ok()) continue;
            const std::string stem = std::string(to_string(v)) + "_run" + std::to_string(r.run);
            io::atomic_write(out / "logs" / (stem + ".csv"), training_log_csv(*r.training));
            save_checkpoint(out / "checkpoints" / (stem + ".ckpt"), r.training->model);
        }
        if (ex.completed() == 0) suite.failed_variants.push_back(to_string(v));
        suite.experiments.push_back(std::move(ex));
    }
    io::atomic_write(out / "results.csv", results_csv(suite.experiments));
    io::atomic_write(out / "summary.csv", summary_csv(suite.experiments));
    io::atomic_write(out / "summary.md", summary_markdown(suite.experiments));
    io::atomic_write(out / "metadata.txt", run_metadata(cfg, suite.experiments));
    return suite;
}

// ---- Projection ---------------------------------------------------------------

struct ProjectedPoint {
    double pc1 = 0.0;
    double pc2 = 0.0;
    std::size_t class_label = 0;
    DomainRole domain_role = DomainRole::Source;
};

/// Projects row vectors onto their top-2 principal components. Each axis is
/// signed so that its largest-magnitude loading is positive.
inline std::vector<std::array<double, 2>> pca_2d(const Eigen::MatrixXd& rows) {
    if (rows.rows() < 3) throw ContractError("projection needs at least 3 samples");
    const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("projection: eigen decomposition failed");
    const Eigen::Index dim = cov.rows();
    Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(dim, 2);
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(2, dim); ++k) {
        Eigen::VectorXd a = eig.eigenvectors().col(dim - 1 - k);  // eigenvalues ascend
        Eigen::Index arg = 0;
        a.cwiseAbs().maxCoeff(&arg);
        if (a(arg) < 0) a = -a;
        axes.col(k) = a;
    }
    const Eigen::MatrixXd proj = centered * axes;
    std::vector<std::array<double, 2>> out(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) out[static_cast<std::size_t>(i)] = {proj(i, 0), proj(i, 1)};
    return out;
}

inline std::vector<ProjectedPoint> project_latents(const Model& model, std::span<const Sample> samples) {
    if (samples.size() < 3) throw ContractError("projection needs at least 3 samples");
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Graph g(false);
    const Tensor f = model.encode(g, stack_features(samples, all));
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(f.rows()), static_cast<Eigen::Index>(f.cols()));
    for (std::size_t r = 0; r < f.rows(); ++r)
        for (std::size_t c = 0; c < f.cols(); ++c) rows(Eigen::Index(r), Eigen::Index(c)) = f.at(r, c);
    const auto pcs = pca_2d(rows);
    std::vector<ProjectedPoint> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back({pcs[i][0], pcs[i][1], samples[i].class_label, samples[i].domain_role});
    }
    return out;
}

inline std::string projection_csv(std::span<const ProjectedPoint> points) {
    std::ostringstream os;
    os << "pc1,pc2,class_label,domain_role\n";
    for (const auto& p : points) {
        os << io::format_double(p.pc1) << ',' << io::format_double(p.pc2) << ',' << p.class_label << ','
           << to_string(p.domain_role) << '\n';
    }
    return os.str();
}

inline std::vector<ProjectedPoint> dump_latent_projection(const Model& model, std::span<const Sample> samples,
                                                          const std::filesystem::path& out) {
    auto points = project_latents(model, samples);
    io::atomic_write(out, projection_csv(points));
    return points;
}

}  // namespace l2i
