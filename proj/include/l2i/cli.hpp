#pragma once

// Command-line front end: run, generate-data, eval, project.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "l2i/config.hpp"
#include "l2i/data.hpp"
#include "l2i/experiment.hpp"
#include "l2i/io.hpp"
#include "l2i/model.hpp"
#include "l2i/trainer.hpp"

namespace l2i {

namespace detail {

struct CliOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string variants;
    std::optional<std::size_t> runs;
    std::string checkpoint;
    std::string data;
    std::string split = "test";
};

inline ExperimentConfig load_experiment_config(const CliOptions& o) {
    ExperimentConfig cfg = o.config.empty() ? parse_config_text("") : parse_config(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.runs) cfg.n_runs = *o.runs;
    if (!o.variants.empty()) {
        cfg.variants.clear();
        for (const auto& v : io::split(o.variants, ',')) cfg.variants.push_back(parse_variant(io::trim(v)));
    }
    cfg.validate();
    return cfg;
}

inline std::vector<Sample> load_samples(const CliOptions& o) {
    const Dataset data = dataset_from_csv(io::read_file(o.data));
    if (o.split == "all") return data;
    return select_split(data, parse_split(o.split));
}

inline int cmd_run(const CliOptions& o, std::ostream& out, std::ostream& err) {
    const auto cfg = load_experiment_config(o);
    const auto suite = run_suite(cfg, [&err](const std::string& line) { err << line << '\n'; });
    out << summary_markdown(suite.experiments);
    out << "results written to " << cfg.output_dir << '\n';
    for (const auto& v : suite.failed_variants) err << "variant " << v << " failed in every run\n";
    return suite.ok() ? 0 : 1;
}

inline int cmd_generate(const CliOptions& o, std::ostream& out) {
    const auto cfg = load_experiment_config(o);
    const Dataset data = generate_dataset(run_dataset_config(cfg, 0));
    const auto path = std::filesystem::path(cfg.output_dir) / "dataset.csv";
    io::atomic_write(path, dataset_to_csv(data));
    out << data.size() << " samples written to " << path.string() << '\n';
    return 0;
}

inline int cmd_eval(const CliOptions& o, std::ostream& out) {
    const Model model = load_checkpoint(o.checkpoint);
    const auto samples = load_samples(o);
    std::ostringstream csv;
    csv << "domain,n,accuracy,kappa,auroc\n";
    for (DomainFilter f : {DomainFilter::Target, DomainFilter::Source, DomainFilter::All}) {
        MetricScores m;
        try {
            m = evaluate(model, samples, f);
        } catch (const ConfigError&) {
            continue;  // no samples of this domain
        }
        csv << to_string(f) << ',' << m.n_samples << ',' << io::format_double(m.accuracy) << ','
            << io::format_double(m.kappa) << ',' << (m.auroc ? io::format_double(*m.auroc) : "") << '\n';
    }
    out << csv.str();
    if (!o.out.empty()) io::atomic_write(std::filesystem::path(o.out) / "eval.csv", csv.str());
    return 0;
}

inline int cmd_project(const CliOptions& o, std::ostream& out) {
    const Model model = load_checkpoint(o.checkpoint);
    const auto samples = load_samples(o);
    const auto path = std::filesystem::path(o.out.empty() ? "." : o.out) / "projection.csv";
    const auto points = dump_latent_projection(model, samples, path);
    out << points.size() << " points written to " << path.string() << '\n';
    return 0;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Learn-to-ignore domain adaptation experiments", "l2i"};
    app.require_subcommand(1);
    detail::CliOptions o;

    auto* run = app.add_subcommand("run", "train every variant for n runs and write result tables");
    auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset of run 0 as CSV");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset CSV");
    auto* project = app.add_subcommand("project", "dump a 2-D PCA projection of the latent vectors");

    for (auto* sub : {run, gen}) {
        sub->add_option("--config", o.config, "config file")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--seed", o.seed, "master seed override");
    }
    run->add_option("--variants", o.variants, "comma-separated variants");
    run->add_option("--runs", o.runs, "number of runs")->check(CLI::PositiveNumber);
    for (auto* sub : {eval, project}) {
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
        sub->add_option("--data", o.data, "dataset CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--split", o.split, "train, val, test or all")
            ->check(CLI::IsMember({"train", "val", "test", "all"}));
        sub->add_option("--out", o.out, "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (run->parsed()) return detail::cmd_run(o, out, err);
        if (gen->parsed()) return detail::cmd_generate(o, out);
        if (eval->parsed()) return detail::cmd_eval(o, out);
        return detail::cmd_project(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace l2i
