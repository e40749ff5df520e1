#pragma once

// Experiment configuration in a plain "section.key = value" text format.
// '#' starts a comment; blank lines are ignored; omitted keys keep their
// defaults. Domains are listed as
//   dataset.domain.<id> = <target|source> <offset> <count_class0>,<count_class1>,...
// and, when present, replace the default domain list.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "l2i/data.hpp"
#include "l2i/errors.hpp"
#include "l2i/io.hpp"
#include "l2i/losses.hpp"
#include "l2i/model.hpp"
#include "l2i/optim.hpp"
#include "l2i/trainer.hpp"

namespace l2i {

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;  // input_dim and num_classes follow the dataset
    LossConfig loss;
    OptimizerConfig optimizer;
    EarlyStopConfig early_stop;
    std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
    std::size_t n_runs = 10;
    std::uint64_t master_seed = 0;
    std::string output_dir = "results";

    void validate() const {
        dataset.validate();
        ModelConfig m = model;
        m.input_dim = dataset.feature_dim;
        m.num_classes = dataset.num_classes;
        m.validate();
        if (model.input_dim != dataset.feature_dim || model.num_classes != dataset.num_classes) {
            throw ConfigError("model dimensions must follow the dataset");
        }
        const bool margins = std::any_of(variants.begin(), variants.end(), uses_margins);
        loss.validate(margins);
        optimizer.validate();
        early_stop.validate();
        if (variants.empty()) throw ConfigError("experiment.variants must not be empty");
        if (n_runs < 1) throw ConfigError("experiment.n_runs must be >= 1");
        const bool fixed = std::find(variants.begin(), variants.end(), Variant::Fixed) != variants.end();
        if (fixed && dataset.num_classes != 2) throw ConfigError("variant Fixed needs exactly two classes");
    }
    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

inline std::vector<std::size_t> parse_sizes(std::string_view s) {
    std::vector<std::size_t> out;
    if (io::trim(s).empty()) return out;
    for (const auto& part : io::split(s, ',')) out.push_back(io::parse_int<std::size_t>(io::trim(part)));
    return out;
}

}  // namespace detail

inline std::string emit_config(const ExperimentConfig& cfg) {
    using io::format_double;
    std::ostringstream os;
    const auto& d = cfg.dataset;
    os << "dataset.num_classes = " << d.num_classes << '\n'
       << "dataset.feature_dim = " << d.feature_dim << '\n'
       << "dataset.class_signal = " << format_double(d.class_signal) << '\n'
       << "dataset.nuisance_scale = " << format_double(d.nuisance_scale) << '\n'
       << "dataset.noise_sigma = " << format_double(d.noise_sigma) << '\n'
       << "dataset.split = " << format_double(d.split_fractions[0]) << ',' << format_double(d.split_fractions[1])
       << ',' << format_double(d.split_fractions[2]) << '\n';
    for (const auto& dom : d.domains) {
        os << "dataset.domain." << dom.domain_id << " = " << to_string(dom.role) << ' '
           << format_double(dom.nuisance_offset) << ' ' << detail::join_sizes(dom.class_counts) << '\n';
    }
    os << "model.hidden = " << detail::join_sizes(cfg.model.encoder_hidden) << '\n'
       << "model.latent_dim = " << cfg.model.latent_dim << '\n'
       << "loss.lambda_cen = " << format_double(cfg.loss.lambda_cen) << '\n'
       << "loss.lambda_latent = " << format_double(cfg.loss.lambda_latent) << '\n'
       << "loss.r = " << format_double(cfg.loss.r) << '\n'
       << "loss.d = " << format_double(cfg.loss.d) << '\n'
       << "optimizer.beta1 = " << format_double(cfg.optimizer.beta1) << '\n'
       << "optimizer.beta2 = " << format_double(cfg.optimizer.beta2) << '\n'
       << "optimizer.weight_decay = " << format_double(cfg.optimizer.weight_decay) << '\n'
       << "optimizer.lr_O = " << format_double(cfg.optimizer.lr_O) << '\n'
       << "optimizer.lr_EC = " << format_double(cfg.optimizer.lr_EC) << '\n'
       << "optimizer.eps = " << format_double(cfg.optimizer.eps) << '\n'
       << "early_stop.patience = " << cfg.early_stop.patience << '\n'
       << "early_stop.eval_interval = " << cfg.early_stop.eval_interval << '\n'
       << "early_stop.max_steps = " << cfg.early_stop.max_steps << '\n'
       << "experiment.variants = ";
    for (std::size_t i = 0; i < cfg.variants.size(); ++i) os << (i ? "," : "") << to_string(cfg.variants[i]);
    os << '\n'
       << "experiment.n_runs = " << cfg.n_runs << '\n'
       << "experiment.master_seed = " << cfg.master_seed << '\n'
       << "experiment.output_dir = " << cfg.output_dir << '\n';
    return os.str();
}

/// Parses and validates a configuration; omitted keys keep their defaults.
inline ExperimentConfig parse_config_text(std::string_view text) {
    ExperimentConfig cfg;
    using Setter = std::function<void(std::string_view)>;
    auto num = [](double& field) { return Setter([&field](std::string_view v) { field = io::parse_double(v); }); };
    auto size = [](std::size_t& field) {
        return Setter([&field](std::string_view v) { field = io::parse_int<std::size_t>(v); });
    };
    const std::map<std::string, Setter, std::less<>> setters{
        {"dataset.num_classes", size(cfg.dataset.num_classes)},
        {"dataset.feature_dim", size(cfg.dataset.feature_dim)},
        {"dataset.class_signal", num(cfg.dataset.class_signal)},
        {"dataset.nuisance_scale", num(cfg.dataset.nuisance_scale)},
        {"dataset.noise_sigma", num(cfg.dataset.noise_sigma)},
        {"dataset.split",
         [&](std::string_view v) {
             const auto parts = io::split(v, ',');
             if (parts.size() != 3) throw ConfigError("dataset.split needs three fractions");
             for (std::size_t i = 0; i < 3; ++i) cfg.dataset.split_fractions[i] = io::parse_double(io::trim(parts[i]));
         }},
        {"model.hidden", [&](std::string_view v) { cfg.model.encoder_hidden = detail::parse_sizes(v); }},
        {"model.latent_dim", size(cfg.model.latent_dim)},
        {"loss.lambda_cen", num(cfg.loss.lambda_cen)},
        {"loss.lambda_latent", num(cfg.loss.lambda_latent)},
        {"loss.r", num(cfg.loss.r)},
        {"loss.d", num(cfg.loss.d)},
        {"optimizer.beta1", num(cfg.optimizer.beta1)},
        {"optimizer.beta2", num(cfg.optimizer.beta2)},
        {"optimizer.weight_decay", num(cfg.optimizer.weight_decay)},
        {"optimizer.lr_O", num(cfg.optimizer.lr_O)},
        {"optimizer.lr_EC", num(cfg.optimizer.lr_EC)},
        {"optimizer.eps", num(cfg.optimizer.eps)},
        {"early_stop.patience", size(cfg.early_stop.patience)},
        {"early_stop.eval_interval", size(cfg.early_stop.eval_interval)},
        {"early_stop.max_steps", size(cfg.early_stop.max_steps)},
        {"experiment.variants",
         [&](std::string_view v) {
             cfg.variants.clear();
             for (const auto& part : io::split(v, ',')) cfg.variants.push_back(parse_variant(io::trim(part)));
         }},
        {"experiment.n_runs", size(cfg.n_runs)},
        {"experiment.master_seed",
         [&](std::string_view v) { cfg.master_seed = io::parse_int<std::uint64_t>(v); }},
        {"experiment.output_dir", [&](std::string_view v) { cfg.output_dir = std::string(v); }},
    };

    std::vector<DomainSpec> domains;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string_view view = line;
        if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
        view = io::trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(io::trim(view.substr(0, eq)));
        const auto value = io::trim(view.substr(eq + 1));
        try {
            if (key.starts_with("dataset.domain.")) {
                DomainSpec dom;
                dom.domain_id = io::parse_int<int>(std::string_view(key).substr(15));
                std::istringstream parts{std::string(value)};
                std::string role, offset, counts;
                if (!(parts >> role >> offset >> counts)) throw ConfigError("expected '<role> <offset> <counts>'");
                dom.role = parse_role(role);
                dom.nuisance_offset = io::parse_double(offset);
                dom.class_counts = detail::parse_sizes(counts);
                domains.push_back(std::move(dom));
                continue;
            }
            const auto it = setters.find(key);
            if (it == setters.end()) throw ConfigError("unknown key '" + key + "'");
            it->second(value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + " (" + key + "): " + e.what());
        }
    }
    if (!domains.empty()) cfg.dataset.domains = std::move(domains);
    cfg.model.input_dim = cfg.dataset.feature_dim;
    cfg.model.num_classes = cfg.dataset.num_classes;
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config_text(io::read_file(path));
}

}  // namespace l2i
