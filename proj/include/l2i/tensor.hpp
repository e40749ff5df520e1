#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors of doubles.
//
// A Tensor is a shared handle: copies alias the same values and gradient
// buffer, which is how a parameter receives gradient from every graph it is
// used in. Graph records the operations applied to gradient-carrying tensors
// and replays their local rules in reverse on backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "l2i/errors.hpp"

namespace l2i {

using Shape = std::vector<std::size_t>;

/// Norms at or below this value cannot be normalised.
inline constexpr double kNormEpsilon = 1e-12;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : data_(std::make_shared<Storage>()) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
        data_->shape = std::move(shape);
        data_->values = std::move(values);
        data_->requires_grad = requires_grad;
        if (requires_grad) data_->grad.assign(data_->values.size(), 0.0);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({}, {v}, requires_grad);
    }
    static Tensor vector(std::vector<double> v, bool requires_grad = false) {
        const auto n = v.size();
        return Tensor({n}, std::move(v), requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(v), requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(data_); }
    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t size() const { return data_->values.size(); }
    // Rank-1 tensors behave as a single row.
    std::size_t rows() const { return rank() == 2 ? data_->shape[0] : 1; }
    std::size_t cols() const { return rank() == 0 ? 1 : data_->shape.back(); }

    std::span<const double> values() const { return data_->values; }
    std::span<double> mutable_values() { return data_->values; }
    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
        return data_->values[0];
    }
    double at(std::size_t i) const { return data_->values.at(i); }
    double at(std::size_t r, std::size_t c) const { return data_->values.at(r * cols() + c); }

    bool requires_grad() const { return data_->requires_grad; }
    std::span<const double> grad() const { return data_->grad; }
    // Handles alias storage, so gradient accumulation works through const handles.
    std::span<double> mutable_grad() const { return data_->grad; }
    void zero_grad() { std::fill(data_->grad.begin(), data_->grad.end(), 0.0); }

    /// Value copy that no graph will propagate into.
    Tensor detach() const { return Tensor(shape(), data_->values, false); }
    /// Independent deep copy keeping requires_grad; gradient starts at zero.
    Tensor clone() const { return Tensor(shape(), data_->values, requires_grad()); }

    bool shares_storage(const Tensor& other) const noexcept { return data_ == other.data_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> data_;
};

/// Records differentiable operations and runs reverse accumulation.
///
/// A graph constructed with record=false evaluates the same operations
/// without storing backward rules (inference, finite differences).
/// backward() may run once per graph.
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool recording() const noexcept { return record_; }

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
            throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                                 shape_string(b.shape()));
        }
        const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
        std::vector<double> out(m * n, 0.0);
        const auto av = a.values();
        const auto bv = b.values();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = av[i * k + p];
                for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
            }
        return emit("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Tensor& c) {
            const auto g = c.grad();
            if (a.requires_grad()) {  // dA = dC . B^T
                auto ga = a.mutable_grad();
                const auto bv = b.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += s;
                    }
            }
            if (b.requires_grad()) {  // dB = A^T . dC
                auto gb = b.mutable_grad();
                const auto av = a.values();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        });
    }

    // Binary elementwise ops accept equal shapes or a single-element operand.
    Tensor add(const Tensor& a, const Tensor& b) {
        return binary("add", a, b, [](double x, double y) { return x + y; },
                      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
    }
    Tensor sub(const Tensor& a, const Tensor& b) {
        return binary("sub", a, b, [](double x, double y) { return x - y; },
                      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
    }
    Tensor mul(const Tensor& a, const Tensor& b) {
        return binary("mul", a, b, [](double x, double y) { return x * y; },
                      [](double, double y) { return y; }, [](double x, double) { return x; });
    }

    /// a[M×N] + bias[N] broadcast over rows.
    Tensor add_bias(const Tensor& a, const Tensor& bias) {
        if (bias.rank() != 1 || bias.size() != a.cols()) {
            throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " +
                                 shape_string(a.shape()));
        }
        const std::size_t rows = a.rows(), cols = a.cols();
        std::vector<double> out(a.values().begin(), a.values().end());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.values()[c];
        return emit("add_bias", a.shape(), std::move(out), {a, bias},
                    [a, bias, rows, cols](const Tensor& o) {
                        const auto g = o.grad();
                        if (a.requires_grad()) {
                            auto ga = a.mutable_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        }
                        if (bias.requires_grad()) {
                            auto gb = bias.mutable_grad();
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                        }
                    });
    }

    Tensor relu(const Tensor& a) { return max_scalar(a, 0.0); }

    /// max(x, c); subgradient 1 only where x > c (0 at the tie).
    Tensor max_scalar(const Tensor& a, double c) {
        return unary("max_scalar", a, [c](double x) { return x > c ? x : c; },
                     [c](double x, double) { return x > c ? 1.0 : 0.0; });
    }
    Tensor exp(const Tensor& a) {
        return unary("exp", a, [](double x) { return std::exp(x); },
                     [](double, double y) { return y; });
    }
    Tensor log(const Tensor& a) {
        for (double x : a.values())
            if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
        return unary("log", a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
    }
    Tensor square(const Tensor& a) {
        return unary("square", a, [](double x) { return x * x; },
                     [](double x, double) { return 2.0 * x; });
    }
    Tensor scale(const Tensor& a, double s) {
        return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
    }
    Tensor add_scalar(const Tensor& a, double s) {
        return unary("add_scalar", a, [s](double x) { return x + s; },
                     [](double, double) { return 1.0; });
    }

    Tensor sum(const Tensor& a) {
        double s = 0.0;
        for (double x : a.values()) s += x;
        return emit("sum", {}, {s}, {a}, [a](const Tensor& o) {
            const double g = o.grad()[0];
            for (double& ga : a.mutable_grad()) ga += g;
        });
    }
    Tensor mean(const Tensor& a) {
        if (a.size() == 0) throw DimensionError("mean of empty tensor");
        return scale(sum(a), 1.0 / static_cast<double>(a.size()));
    }

    /// Euclidean norm of a vector (scalar result) or of each matrix row
    /// (vector result). The gradient at a zero row is taken as zero.
    Tensor norm(const Tensor& a) {
        const std::size_t rows = a.rows(), cols = a.cols();
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += a.values()[r * cols + c] * a.values()[r * cols + c];
            out[r] = std::sqrt(s);
        }
        Shape shape = a.rank() == 2 ? Shape{rows} : Shape{};
        return emit("norm", std::move(shape), std::move(out), {a}, [a, rows, cols](const Tensor& o) {
            auto ga = a.mutable_grad();
            const auto av = a.values();
            for (std::size_t r = 0; r < rows; ++r) {
                const double n = o.values()[r];
                if (n == 0.0) continue;
                const double g = o.grad()[r] / n;
                for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g * av[r * cols + c];
            }
        });
    }

    /// Scales a vector, or each matrix row, to unit Euclidean norm.
    Tensor l2_normalize(const Tensor& a) {
        const std::size_t rows = a.rows(), cols = a.cols();
        std::vector<double> out(a.size());
        std::vector<double> norms(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += a.values()[r * cols + c] * a.values()[r * cols + c];
            const double n = std::sqrt(s);
            if (!(n > kNormEpsilon)) {
                throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                            std::to_string(n));
            }
            norms[r] = n;
            for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a.values()[r * cols + c] / n;
        }
        return emit("l2_normalize", a.shape(), std::move(out), {a},
                    [a, rows, cols, norms = std::move(norms)](const Tensor& o) {
                        // dv = (g - y (y.g)) / |v|
                        auto ga = a.mutable_grad();
                        const auto y = o.values();
                        const auto g = o.grad();
                        for (std::size_t r = 0; r < rows; ++r) {
                            double yg = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) yg += y[r * cols + c] * g[r * cols + c];
                            for (std::size_t c = 0; c < cols; ++c) {
                                const std::size_t i = r * cols + c;
                                ga[i] += (g[i] - y[i] * yg) / norms[r];
                            }
                        }
                    });
    }

    /// Selects rows of a matrix; indices may repeat.
    Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
        if (a.rank() != 2) throw DimensionError("gather_rows: expected matrix, got " + shape_string(a.shape()));
        const std::size_t cols = a.cols();
        std::vector<double> out;
        out.reserve(index.size() * cols);
        for (std::size_t r : index) {
            if (r >= a.rows()) {
                throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                                 shape_string(a.shape()));
            }
            out.insert(out.end(), a.values().begin() + r * cols, a.values().begin() + (r + 1) * cols);
        }
        std::vector<std::size_t> idx(index.begin(), index.end());
        const std::size_t n = idx.size();
        return emit("gather_rows", {n, cols}, std::move(out), {a},
                    [a, cols, idx = std::move(idx)](const Tensor& o) {
                        auto ga = a.mutable_grad();
                        for (std::size_t k = 0; k < idx.size(); ++k)
                            for (std::size_t c = 0; c < cols; ++c) ga[idx[k] * cols + c] += o.grad()[k * cols + c];
                    });
    }

    /// -log softmax(logits)[label] for a logit vector.
    Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
        if (logits.rank() != 1) {
            throw DimensionError("softmax_cross_entropy: expected vector logits, got " +
                                 shape_string(logits.shape()));
        }
        const std::size_t labels[] = {label};
        auto rows = cross_entropy_rows(logits, labels);
        return emit("reshape_scalar", {}, {rows.item()}, {rows}, [rows](const Tensor& o) {
            rows.mutable_grad()[0] += o.grad()[0];
        });
    }

    /// Per-row cross-entropy of a logit matrix (or a single logit vector).
    /// Returns one loss per row.
    Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
        const std::size_t rows = logits.rows(), cols = logits.cols();
        if (labels.size() != rows) {
            throw DimensionError("cross_entropy_rows: " + std::to_string(labels.size()) + " labels for logits " +
                                 shape_string(logits.shape()));
        }
        std::vector<double> probs(logits.size());
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            if (labels[r] >= cols) {
                throw IndexError("cross entropy label " + std::to_string(labels[r]) + " out of range for " +
                                 std::to_string(cols) + " classes");
            }
            const auto z = logits.values().subspan(r * cols, cols);
            const double zmax = *std::max_element(z.begin(), z.end());
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                probs[r * cols + c] = std::exp(z[c] - zmax);
                s += probs[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= s;
            out[r] = zmax + std::log(s) - z[labels[r]];
        }
        std::vector<std::size_t> lab(labels.begin(), labels.end());
        return emit("cross_entropy", {rows}, std::move(out), {logits},
                    [logits, rows, cols, lab = std::move(lab), probs = std::move(probs)](const Tensor& o) {
                        auto gl = logits.mutable_grad();
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double g = o.grad()[r];
                            for (std::size_t c = 0; c < cols; ++c) {
                                const double onehot = c == lab[r] ? 1.0 : 0.0;
                                gl[r * cols + c] += g * (probs[r * cols + c] - onehot);
                            }
                        }
                    });
    }

    /// Accumulates d(loss)/d(t) into every reachable gradient-carrying tensor.
    void backward(const Tensor& loss) {
        if (loss.size() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
        }
        if (consumed_) throw ContractError("backward: graph already consumed; run a new forward pass");
        consumed_ = true;
        if (!loss.requires_grad()) return;
        Tensor seed = loss;
        seed.mutable_grad()[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->rule(it->output);
            for (auto& in : it->inputs) {
                if (!in.requires_grad()) continue;
                for (double g : in.grad()) {
                    if (!std::isfinite(g)) throw NumericalError(std::string("non-finite gradient in ") + it->name);
                }
            }
        }
        nodes_.clear();
    }

private:
    using Rule = std::function<void(const Tensor&)>;

    struct Node {
        const char* name;
        Tensor output;
        std::vector<Tensor> inputs;
        Rule rule;
    };

    Tensor emit(const char* name, Shape shape, std::vector<double> values, std::vector<Tensor> inputs, Rule rule) {
        for (double v : values) {
            if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + name);
        }
        const bool needs_grad =
            record_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        Tensor out(std::move(shape), std::move(values), needs_grad);
        if (needs_grad) nodes_.push_back({name, out, std::move(inputs), std::move(rule)});
        return out;
    }

    template <class F, class D>
    Tensor unary(const char* name, const Tensor& a, F f, D df) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
        return emit(name, a.shape(), std::move(out), {a}, [a, df](const Tensor& o) {
            auto ga = a.mutable_grad();
            const auto av = a.values();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad()[i] * df(av[i], o.values()[i]);
        });
    }

    template <class F, class DA, class DB>
    Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
        const bool a_scalar = a.size() == 1 && b.size() != 1;
        const bool b_scalar = b.size() == 1 && a.size() != 1;
        if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
            throw DimensionError(std::string(name) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                                 shape_string(b.shape()));
        }
        const Shape shape = a_scalar ? b.shape() : a.shape();
        const std::size_t n = shape_size(shape);
        auto ai = [a_scalar](std::size_t i) { return a_scalar ? std::size_t{0} : i; };
        auto bi = [b_scalar](std::size_t i) { return b_scalar ? std::size_t{0} : i; };
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = f(a.values()[ai(i)], b.values()[bi(i)]);
        return emit(name, shape, std::move(out), {a, b}, [a, b, n, ai, bi, da, db](const Tensor& o) {
            const auto g = o.grad();
            const auto av = a.values();
            const auto bv = b.values();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < n; ++i) ga[ai(i)] += g[i] * da(av[ai(i)], bv[bi(i)]);
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i] * db(av[ai(i)], bv[bi(i)]);
            }
        });
    }

    std::vector<Node> nodes_;
    bool record_;
    bool consumed_ = false;
};

/// Max coordinatewise relative error between the analytic gradient of a
/// scalar function and its central-difference estimate, where the function
/// reads `param` (typically through a captured handle).
///
/// The relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
/// `param` gradients are overwritten; other tensors touched by `f` keep
/// whatever the analytic pass accumulates into them.
inline double finite_difference_check(const std::function<Tensor(Graph&)>& f, Tensor param, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("finite_difference_check: eps outside [1e-7, 1e-3]");
    if (!param.requires_grad()) throw ContractError("finite_difference_check: parameter does not require grad");
    param.zero_grad();
    {
        Graph g;
        auto loss = f(g);
        g.backward(loss);
    }
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());
    auto values = param.mutable_values();
    auto eval = [&f] {
        Graph g(false);
        return f(g).item();
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double up = eval();
        values[i] = saved - eps;
        const double down = eval();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

/// Overload for a function of a single input tensor.
inline double finite_difference_check(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                                      double eps) {
    Tensor probe(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    return finite_difference_check([&](Graph& g) { return f(g, probe); }, probe, eps);
}

/// Softmax of a logit vector, computed with max-subtraction.
inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - zmax);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

}  // namespace l2i
