#pragma once

// Synthetic multi-domain data with a domain-specific nuisance feature that is
// perfectly class-predictive across source domains and uninformative inside
// the target domain, plus the batch samplers used in training.
//
// Feature layout of every sample:
//   x[0]  class signal, -mu for class 0 and +mu for class 1, plus noise
//   x[1]  domain nuisance offset (offset * kappa), plus noise
//   x[2:] pure noise

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "l2i/errors.hpp"
#include "l2i/io.hpp"
#include "l2i/model.hpp"

namespace l2i {

enum class Split { Train, Val, Test };

inline const char* to_string(DomainRole r) { return r == DomainRole::Target ? "target" : "source"; }
inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}
inline DomainRole parse_role(std::string_view s) {
    if (s == "target") return DomainRole::Target;
    if (s == "source") return DomainRole::Source;
    throw ConfigError("unknown domain role '" + std::string(s) + "'");
}
inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split '" + std::string(s) + "'");
}

struct DomainSpec {
    int domain_id = 0;
    double nuisance_offset = 0.0;  // in units of DatasetConfig::nuisance_scale
    DomainRole role = DomainRole::Source;
    std::vector<std::size_t> class_counts;

    bool operator==(const DomainSpec&) const = default;
};

struct DatasetConfig {
    std::size_t num_classes = 2;
    std::size_t feature_dim = 8;
    double class_signal = 0.5;     // mu
    double nuisance_scale = 5.0;   // kappa
    double noise_sigma = 0.25;
    std::vector<DomainSpec> domains = default_domains();
    std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
    std::uint64_t seed = 0;

    static std::vector<DomainSpec> default_domains() {
        return {
            {0, 0.0, DomainRole::Target, {43, 43}},
            {1, 1.0, DomainRole::Source, {300, 0}},
            {2, -1.0, DomainRole::Source, {0, 300}},
        };
    }

    double nuisance_ratio() const { return class_signal > 0.0 ? nuisance_scale / class_signal : INFINITY; }

    void validate() const {
        if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
        if (feature_dim < 3) throw ConfigError("dataset.feature_dim must be >= 3");
        if (!(noise_sigma >= 0.0)) throw ConfigError("dataset.noise_sigma must be >= 0");
        if (!std::isfinite(class_signal) || !std::isfinite(nuisance_scale)) {
            throw ConfigError("dataset.class_signal and dataset.nuisance_scale must be finite");
        }
        double total = 0.0;
        for (double f : split_fractions) {
            if (!(f >= 0.0)) throw ConfigError("dataset.split fractions must be >= 0");
            total += f;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("dataset.split fractions must sum to 1");
        if (domains.empty()) throw ConfigError("dataset needs at least one domain");
        bool has_target = false;
        for (const auto& d : domains) {
            if (d.class_counts.size() != num_classes) {
                throw ConfigError("dataset.domain." + std::to_string(d.domain_id) + " needs " +
                                  std::to_string(num_classes) + " class counts");
            }
            if (!std::isfinite(d.nuisance_offset)) throw ConfigError("dataset domain offset must be finite");
            if (d.role == DomainRole::Target) {
                has_target = true;
                for (auto c : d.class_counts)
                    if (c == 0) throw ConfigError("target domain needs samples of every class");
            }
        }
        if (!has_target) throw ConfigError("dataset needs a target domain");
    }
    bool operator==(const DatasetConfig&) const = default;
};

struct Sample {
    std::vector<double> x;
    std::size_t class_label = 0;
    int domain_label = 0;
    DomainRole domain_role = DomainRole::Source;
    Split split = Split::Train;

    bool operator==(const Sample&) const = default;
};

using Dataset = std::vector<Sample>;

inline std::size_t split_count(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

/// Seeded generation; splits are stratified per (domain, class) cell.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset out;
    for (const auto& dom : cfg.domains) {
        const double offset = dom.nuisance_offset * cfg.nuisance_scale;
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            const std::size_t n = dom.class_counts[c];
            if (n == 0) continue;
            const std::size_t n_train = split_count(n, cfg.split_fractions[0]);
            const std::size_t n_val = split_count(n, cfg.split_fractions[1]);
            if (n_train + n_val > n) {
                throw ConfigError("domain " + std::to_string(dom.domain_id) + " class " + std::to_string(c) +
                                  ": counts cannot honour split fractions");
            }
            const std::size_t n_test = n - n_train - n_val;
            const std::size_t parts[] = {n_train, n_val, n_test};
            for (std::size_t s = 0; s < 3; ++s) {
                if (cfg.split_fractions[s] > 0.0 && parts[s] == 0) {
                    throw ConfigError("domain " + std::to_string(dom.domain_id) + " class " + std::to_string(c) +
                                      ": " + std::to_string(n) + " samples leave the " +
                                      to_string(static_cast<Split>(s)) + " split empty");
                }
            }
            // Multi-class signal: evenly spaced levels on [-mu, mu].
            const double level =
                cfg.class_signal * (2.0 * static_cast<double>(c) / static_cast<double>(cfg.num_classes - 1) - 1.0);
            std::vector<Split> splits;
            splits.insert(splits.end(), n_train, Split::Train);
            splits.insert(splits.end(), n_val, Split::Val);
            splits.insert(splits.end(), n_test, Split::Test);
            std::shuffle(splits.begin(), splits.end(), rng);
            for (std::size_t i = 0; i < n; ++i) {
                Sample s;
                s.x.resize(cfg.feature_dim);
                for (auto& v : s.x) v = cfg.noise_sigma * noise(rng);
                s.x[0] += level;
                s.x[1] += offset;
                s.class_label = c;
                s.domain_label = dom.domain_id;
                s.domain_role = dom.role;
                s.split = splits[i];
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

inline std::vector<Sample> select_split(const Dataset& data, Split split) {
    std::vector<Sample> out;
    std::copy_if(data.begin(), data.end(), std::back_inserter(out),
                 [split](const Sample& s) { return s.split == split; });
    return out;
}

/// Indices into the training set. random_part feeds cls and latent losses;
/// center_part[i] is a target-domain sample of class i.
struct Batch {
    std::vector<std::size_t> random_part;
    std::vector<std::size_t> center_part;
};

inline constexpr std::size_t kBatchSize = 10;

/// Two-part batch sampler: a uniform batch drawn without replacement from the
/// whole training set, plus one uniformly drawn target sample per class.
/// The two parts are drawn independently and may overlap.
class BatchSampler {
public:
    BatchSampler(std::span<const Sample> train, std::size_t num_classes, std::size_t batch_size = kBatchSize)
        : size_(train.size()), batch_size_(batch_size), target_by_class_(num_classes) {
        if (train.size() < batch_size) {
            throw SamplerContractError("training set has " + std::to_string(train.size()) +
                                       " samples, fewer than the batch size " + std::to_string(batch_size));
        }
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto& s = train[i];
            if (s.class_label >= num_classes) throw IndexError("sample class label out of range");
            if (s.domain_role == DomainRole::Target) target_by_class_[s.class_label].push_back(i);
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (target_by_class_[c].empty()) {
                throw SamplerContractError("no target-domain training sample for class " + std::to_string(c));
            }
        }
        all_.resize(size_);
        std::iota(all_.begin(), all_.end(), std::size_t{0});
    }

    template <class Rng>
    Batch draw(Rng& rng) const {
        Batch b;
        b.random_part.reserve(batch_size_);
        std::sample(all_.begin(), all_.end(), std::back_inserter(b.random_part), batch_size_, rng);
        for (const auto& pool : target_by_class_) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            b.center_part.push_back(pool[pick(rng)]);
        }
        return b;
    }

private:
    std::size_t size_;
    std::size_t batch_size_;
    std::vector<std::vector<std::size_t>> target_by_class_;
    std::vector<std::size_t> all_;
};

template <class Rng>
Batch sample_batch(std::span<const Sample> train, std::size_t num_classes, Rng& rng) {
    return BatchSampler(train, num_classes).draw(rng);
}

/// Batches that cycle over the nonempty (domain role, class) cells so each
/// cell is represented; the starting cell rotates randomly per batch.
class ClassAwareSampler {
public:
    ClassAwareSampler(std::span<const Sample> train, std::size_t num_classes, std::size_t batch_size = kBatchSize)
        : batch_size_(batch_size) {
        if (train.empty()) throw ConfigError("class-aware sampling needs a nonempty training set");
        std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> cells;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (train[i].class_label >= num_classes) throw IndexError("sample class label out of range");
            cells[{static_cast<int>(train[i].domain_role), train[i].class_label}].push_back(i);
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
            const bool present = cells.contains({0, c}) || cells.contains({1, c});
            if (!present) throw ConfigError("class-aware sampling: class " + std::to_string(c) + " has no samples");
        }
        for (auto& [key, idx] : cells) cells_.push_back(std::move(idx));
        if (cells_.size() > batch_size_) throw ConfigError("class-aware sampling: more cells than batch slots");
    }

    std::size_t cell_count() const noexcept { return cells_.size(); }

    template <class Rng>
    Batch draw(Rng& rng) const {
        Batch b;
        std::uniform_int_distribution<std::size_t> start_dist(0, cells_.size() - 1);
        const std::size_t start = start_dist(rng);
        for (std::size_t slot = 0; slot < batch_size_; ++slot) {
            const auto& cell = cells_[(start + slot) % cells_.size()];
            std::uniform_int_distribution<std::size_t> pick(0, cell.size() - 1);
            b.random_part.push_back(cell[pick(rng)]);
        }
        return b;
    }

private:
    std::size_t batch_size_;
    std::vector<std::vector<std::size_t>> cells_;
};

template <class Rng>
Batch class_aware_batches(std::span<const Sample> train, std::size_t num_classes, Rng& rng) {
    return ClassAwareSampler(train, num_classes).draw(rng);
}

/// weight = N_total / (num_cells * N_cell) over nonempty (domain role, class) cells.
inline std::vector<double> class_domain_weights(std::span<const Sample> train) {
    if (train.empty()) throw ConfigError("class_domain_weights: empty training set");
    std::map<std::pair<int, std::size_t>, std::size_t> counts;
    for (const auto& s : train) ++counts[{static_cast<int>(s.domain_role), s.class_label}];
    const double total = static_cast<double>(train.size());
    const double cells = static_cast<double>(counts.size());
    std::vector<double> w;
    w.reserve(train.size());
    for (const auto& s : train) {
        w.push_back(total / (cells * static_cast<double>(counts[{static_cast<int>(s.domain_role), s.class_label}])));
    }
    return w;
}

// CSV: x_0..x_{D-1},class_label,domain_label,domain_role,split
inline std::string dataset_to_csv(std::span<const Sample> data) {
    std::ostringstream os;
    const std::size_t dim = data.empty() ? 0 : data.front().x.size();
    for (std::size_t i = 0; i < dim; ++i) os << "x_" << i << ',';
    os << "class_label,domain_label,domain_role,split\n";
    for (const auto& s : data) {
        for (double v : s.x) os << io::format_double(v) << ',';
        os << s.class_label << ',' << s.domain_label << ',' << to_string(s.domain_role) << ',' << to_string(s.split)
           << '\n';
    }
    return os.str();
}

inline Dataset dataset_from_csv(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("dataset CSV: missing header");
    const auto header = io::split(io::trim(line), ',');
    if (header.size() < 4 || header[header.size() - 4] != "class_label" || header[header.size() - 3] != "domain_label" ||
        header[header.size() - 2] != "domain_role" || header.back() != "split") {
        throw ConfigError("dataset CSV: unexpected header");
    }
    const std::size_t dim = header.size() - 4;
    for (std::size_t i = 0; i < dim; ++i)
        if (header[i] != "x_" + std::to_string(i)) throw ConfigError("dataset CSV: unexpected column " + header[i]);
    Dataset out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        const auto trimmed = io::trim(line);
        if (trimmed.empty()) continue;
        const auto cols = io::split(trimmed, ',');
        if (cols.size() != header.size()) {
            throw ConfigError("dataset CSV line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " columns");
        }
        Sample s;
        for (std::size_t i = 0; i < dim; ++i) s.x.push_back(io::parse_double(cols[i]));
        s.class_label = io::parse_int<std::size_t>(cols[dim]);
        s.domain_label = io::parse_int<int>(cols[dim + 1]);
        s.domain_role = parse_role(cols[dim + 2]);
        s.split = parse_split(cols[dim + 3]);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace l2i
