#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l2i/errors.hpp"

namespace l2i {

struct MetricScores {
    double accuracy = 0.0;
    double kappa = 0.0;
    std::optional<double> auroc;  // absent when the truth holds a single class
    std::size_t n_samples = 0;
};

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b || a == 0) {
        throw ContractError(std::string(what) + ": need equal nonzero lengths, got " + std::to_string(a) + " and " +
                            std::to_string(b));
    }
}
}  // namespace detail

inline double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    detail::check_lengths(pred.size(), truth.size(), "accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// (p_o - p_e) / (1 - p_e); 0 when chance agreement is already certain.
inline double cohen_kappa(std::span<const std::size_t> pred, std::span<const std::size_t> truth) {
    detail::check_lengths(pred.size(), truth.size(), "cohen_kappa");
    const std::size_t k = std::max(*std::max_element(pred.begin(), pred.end()),
                                   *std::max_element(truth.begin(), truth.end())) + 1;
    std::vector<double> pm(k, 0.0), tm(k, 0.0);
    double agree = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pm[pred[i]] += 1.0;
        tm[truth[i]] += 1.0;
        agree += pred[i] == truth[i];
    }
    const double n = static_cast<double>(pred.size());
    const double po = agree / n;
    double pe = 0.0;
    for (std::size_t c = 0; c < k; ++c) pe += (pm[c] / n) * (tm[c] / n);
    if (pe == 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

/// Mann-Whitney form of the area under the ROC curve: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed from midranks in O(N log N). Class 1 is the positive class.
inline double auroc(std::span<const double> scores, std::span<const std::size_t> truth) {
    detail::check_lengths(scores.size(), truth.size(), "auroc");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            if (truth[order[t]] == 1) {
                pos_rank_sum += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auroc: truth contains a single class");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Scores for binary predictions and class-1 probabilities.
inline MetricScores score(std::span<const std::size_t> pred, std::span<const double> prob_class1,
                          std::span<const std::size_t> truth) {
    MetricScores m;
    m.accuracy = accuracy(pred, truth);
    m.kappa = cohen_kappa(pred, truth);
    try {
        m.auroc = auroc(prob_class1, truth);
    } catch (const UndefinedMetricError&) {
        m.auroc.reset();
    }
    m.n_samples = pred.size();
    return m;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd r;
    r.count = xs.size();
    if (xs.empty()) return r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

struct AggregateScores {
    MeanStd accuracy;
    MeanStd kappa;
    MeanStd auroc;  // over rows where AUROC is defined
};

inline AggregateScores aggregate(std::span<const MetricScores> rows) {
    std::vector<double> acc, kap, au;
    for (const auto& r : rows) {
        acc.push_back(r.accuracy);
        kap.push_back(r.kappa);
        if (r.auroc) au.push_back(*r.auroc);
    }
    return {mean_std(acc), mean_std(kap), mean_std(au)};
}

/// "89.0 [3.9]" style: scores x100 at one decimal.
inline std::string format_mean_std(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f [%.1f]", mean * 100.0, std * 100.0);
    return buf;
}

inline std::string format_mean_std(const MeanStd& m) {
    return m.count == 0 ? std::string("n/a") : format_mean_std(m.mean, m.std);
}

}  // namespace l2i
