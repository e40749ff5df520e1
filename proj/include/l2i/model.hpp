#pragma once

// Encoder E (MLP + unit normalisation), linear classifier C, and the learnable
// class center points O. The three parameter groups never share tensors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "l2i/errors.hpp"
#include "l2i/io.hpp"
#include "l2i/tensor.hpp"

namespace l2i {

struct ModelConfig {
    std::size_t input_dim = 8;
    std::vector<std::size_t> encoder_hidden{64, 64};
    std::size_t latent_dim = 16;
    std::size_t num_classes = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
        if (latent_dim < 2) throw ConfigError("model.latent_dim must be >= 2");
        if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
        for (auto w : encoder_hidden)
            if (w < 1) throw ConfigError("model.hidden widths must be >= 1");
    }
    bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
    std::vector<Tensor> encoder;     // theta_E: W0, b0, W1, b1, ... (W is [in x out])
    std::vector<Tensor> classifier;  // theta_C: W [m x n], b [n]
    Tensor centers;                  // theta_O: [n x m], unit rows

    ModelParams clone() const {
        ModelParams out;
        for (const auto& t : encoder) out.encoder.push_back(t.clone());
        for (const auto& t : classifier) out.classifier.push_back(t.clone());
        out.centers = centers.clone();
        return out;
    }

    /// Copies values (not handles) from a structurally identical set.
    void assign_values(const ModelParams& other) {
        auto copy = [](Tensor& dst, const Tensor& src) {
            if (dst.shape() != src.shape()) throw DimensionError("assign_values: shape mismatch");
            std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
        };
        if (encoder.size() != other.encoder.size() || classifier.size() != other.classifier.size()) {
            throw DimensionError("assign_values: layer count mismatch");
        }
        for (std::size_t i = 0; i < encoder.size(); ++i) copy(encoder[i], other.encoder[i]);
        for (std::size_t i = 0; i < classifier.size(); ++i) copy(classifier[i], other.classifier[i]);
        copy(centers, other.centers);
    }

    void zero_grad() {
        for (auto& t : encoder) t.zero_grad();
        for (auto& t : classifier) t.zero_grad();
        centers.zero_grad();
    }
};

enum class DomainRole { Source, Target };

struct LatentVector {
    std::vector<double> f;
    DomainRole domain_role = DomainRole::Source;
    std::size_t class_label = 0;
};

/// Row-normalised Gaussian center points. For two classes the draw is
/// repeated until the centers are at least 0.5 apart.
inline Tensor init_center_points(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (n < 2 || m < 2) throw ConfigError("init_center_points: need n >= 2 and m >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(n * m);
    for (;;) {
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            do {
                s = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    v[r * m + c] = normal(rng);
                    s += v[r * m + c] * v[r * m + c];
                }
            } while (!(std::sqrt(s) > kNormEpsilon));
            const double norm = std::sqrt(s);
            for (std::size_t c = 0; c < m; ++c) v[r * m + c] /= norm;
        }
        if (n != 2) break;
        double d2 = 0.0;
        for (std::size_t c = 0; c < m; ++c) d2 += (v[c] - v[m + c]) * (v[c] - v[m + c]);
        if (std::sqrt(d2) >= 0.5) break;
    }
    return Tensor::matrix(n, m, std::move(v), true);
}

/// Antipodal centers (1,...,1)/sqrt(m) and (-1,...,-1)/sqrt(m).
inline Tensor fixed_center_points(std::size_t n, std::size_t m) {
    if (n != 2) throw ConfigError("fixed center points are only defined for two classes, got " + std::to_string(n));
    if (m < 2) throw ConfigError("fixed_center_points: need m >= 2");
    const double a = 1.0 / std::sqrt(static_cast<double>(m));
    std::vector<double> v(2 * m);
    for (std::size_t c = 0; c < m; ++c) {
        v[c] = a;
        v[m + c] = -a;
    }
    return Tensor::matrix(2, m, std::move(v), true);
}

class Model {
public:
    explicit Model(ModelConfig cfg) : config_(std::move(cfg)) {
        config_.validate();
        std::mt19937_64 rng(config_.seed);
        std::size_t fan_in = config_.input_dim;
        auto widths = config_.encoder_hidden;
        widths.push_back(config_.latent_dim);
        for (std::size_t w : widths) {
            // Kaiming fan-in scaling.
            params_.encoder.push_back(gaussian({fan_in, w}, std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
            params_.encoder.push_back(Tensor::zeros({w}, true));
            fan_in = w;
        }
        params_.classifier.push_back(
            gaussian({config_.latent_dim, config_.num_classes}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
        params_.classifier.push_back(Tensor::zeros({config_.num_classes}, true));
        params_.centers = init_center_points(config_.num_classes, config_.latent_dim, rng());
    }

    Model(ModelConfig cfg, ModelParams params) : config_(std::move(cfg)), params_(std::move(params)) {
        config_.validate();
    }

    const ModelConfig& config() const noexcept { return config_; }
    ModelParams& params() noexcept { return params_; }
    const ModelParams& params() const noexcept { return params_; }

    Model clone() const { return Model(config_, params_.clone()); }

    /// Normalised latent rows for a [B x input_dim] batch; depends on theta_E only.
    Tensor encode(Graph& g, const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != config_.input_dim) {
            throw DimensionError("encode: expected [B x " + std::to_string(config_.input_dim) + "] input, got " +
                                 shape_string(x.shape()));
        }
        Tensor h = x;
        const std::size_t layers = params_.encoder.size() / 2;
        for (std::size_t l = 0; l < layers; ++l) {
            h = g.add_bias(g.matmul(h, params_.encoder[2 * l]), params_.encoder[2 * l + 1]);
            if (l + 1 < layers) h = g.relu(h);
        }
        return g.l2_normalize(h);
    }

    /// Classifier logits for latent rows; depends on theta_C only.
    Tensor logits(Graph& g, const Tensor& latents) const {
        return g.add_bias(g.matmul(latents, params_.classifier[0]), params_.classifier[1]);
    }

    LatentVector encode(std::span<const double> x, DomainRole role = DomainRole::Source,
                        std::size_t class_label = 0) const {
        if (x.size() != config_.input_dim) {
            throw DimensionError("encode: expected " + std::to_string(config_.input_dim) + " features, got " +
                                 std::to_string(x.size()));
        }
        Graph g(false);
        auto f = encode(g, Tensor::matrix(1, x.size(), {x.begin(), x.end()}));
        return {{f.values().begin(), f.values().end()}, role, class_label};
    }

    /// Softmax class scores p = softmax(C(f)).
    std::vector<double> classify(const LatentVector& f) const {
        if (f.f.size() != config_.latent_dim) throw DimensionError("classify: latent has wrong dimension");
        Graph g(false);
        auto z = logits(g, Tensor::matrix(1, f.f.size(), f.f));
        return softmax(z.values());
    }

private:
    static Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
        std::normal_distribution<double> normal(0.0, stddev);
        std::vector<double> v(shape_size(shape));
        for (double& x : v) x = normal(rng);
        return Tensor(std::move(shape), std::move(v), true);
    }

    ModelConfig config_;
    ModelParams params_;
};


// Checkpoint text format (shortest round-trip decimal, so loading is bit-exact):
//   l2i-checkpoint 1
//   input_dim <D>
//   encoder_hidden <k> <w1> ... <wk>
//   latent_dim <m>
//   num_classes <n>
//   seed <s>
//   tensor <name> <rank> <extents...>
//   <values, one line>
inline void write_checkpoint(std::ostream& os, const Model& model) {
    const auto& cfg = model.config();
    os << "l2i-checkpoint 1\n";
    os << "input_dim " << cfg.input_dim << "\n";
    os << "encoder_hidden " << cfg.encoder_hidden.size();
    for (auto w : cfg.encoder_hidden) os << ' ' << w;
    os << "\nlatent_dim " << cfg.latent_dim << "\nnum_classes " << cfg.num_classes << "\nseed " << cfg.seed << "\n";
    auto dump = [&os](const std::string& name, const Tensor& t) {
        os << "tensor " << name << ' ' << t.rank();
        for (auto e : t.shape()) os << ' ' << e;
        os << '\n';
        for (std::size_t i = 0; i < t.size(); ++i) os << (i ? " " : "") << io::format_double(t.values()[i]);
        os << '\n';
    };
    const auto& p = model.params();
    for (std::size_t i = 0; i < p.encoder.size(); ++i) dump("encoder." + std::to_string(i), p.encoder[i]);
    for (std::size_t i = 0; i < p.classifier.size(); ++i) dump("classifier." + std::to_string(i), p.classifier[i]);
    dump("centers", p.centers);
}

inline Model read_checkpoint(std::istream& is) {
    auto expect = [&is](const std::string& key) {
        std::string k;
        if (!(is >> k) || k != key) throw ConfigError("checkpoint: expected '" + key + "', got '" + k + "'");
    };
    expect("l2i-checkpoint");
    int version = 0;
    is >> version;
    if (version != 1) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    ModelConfig cfg;
    std::size_t k = 0;
    expect("input_dim");
    is >> cfg.input_dim;
    expect("encoder_hidden");
    is >> k;
    cfg.encoder_hidden.resize(k);
    for (auto& w : cfg.encoder_hidden) is >> w;
    expect("latent_dim");
    is >> cfg.latent_dim;
    expect("num_classes");
    is >> cfg.num_classes;
    expect("seed");
    is >> cfg.seed;
    if (!is) throw ConfigError("checkpoint: truncated header");

    auto read_tensor = [&](const std::string& name) {
        expect("tensor");
        expect(name);
        std::size_t rank = 0;
        is >> rank;
        Shape shape(rank);
        for (auto& e : shape) is >> e;
        std::vector<double> v(shape_size(shape));
        std::string tok;
        for (auto& x : v) {
            if (!(is >> tok)) throw ConfigError("checkpoint: truncated tensor " + name);
            x = io::parse_double(tok);
        }
        return Tensor(std::move(shape), std::move(v), true);
    };
    ModelParams p;
    for (std::size_t i = 0; i < 2 * (cfg.encoder_hidden.size() + 1); ++i)
        p.encoder.push_back(read_tensor("encoder." + std::to_string(i)));
    for (std::size_t i = 0; i < 2; ++i) p.classifier.push_back(read_tensor("classifier." + std::to_string(i)));
    p.centers = read_tensor("centers");
    Model model(cfg, std::move(p));
    // Shapes must agree with the config.
    Model reference(cfg);
    auto check = [](const Tensor& a, const Tensor& b) {
        if (a.shape() != b.shape()) throw ConfigError("checkpoint: tensor shape disagrees with config");
    };
    for (std::size_t i = 0; i < model.params().encoder.size(); ++i)
        check(model.params().encoder[i], reference.params().encoder[i]);
    for (std::size_t i = 0; i < 2; ++i) check(model.params().classifier[i], reference.params().classifier[i]);
    check(model.params().centers, reference.params().centers);
    return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ostringstream os;
    write_checkpoint(os, model);
    io::atomic_write(path, os.str());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

}  // namespace l2i
