#pragma once

#include <Eigen/Dense>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "unifyedit/backend.hpp"
#include "unifyedit/constraints.hpp"
#include "unifyedit/errors.hpp"

namespace unifyedit {

struct ToyBackendConfig {
    int channels = 4;
    int spatial = 16;
    std::vector<int> sa_resolutions = {16, 8};
    std::vector<int> ca_resolutions = {16};
    int sa_layers_per_resolution = 2;
    int ca_layers_per_resolution = 5;
    int embed_dim = 8;
    int max_timestep = 50;

    void validate() const {
        detail::require(channels >= 1, "ToyBackendConfig: channels must be >= 1");
        detail::require(spatial >= 2, "ToyBackendConfig: spatial must be >= 2");
        detail::require(!sa_resolutions.empty() && !ca_resolutions.empty(),
                        "ToyBackendConfig: need at least one resolution of each kind");
        for (int r : sa_resolutions) {
            detail::require(r >= 1 && r <= spatial && spatial % r == 0,
                            "ToyBackendConfig: self-attention resolution must divide spatial");
        }
        for (int r : ca_resolutions) {
            detail::require(r >= 1 && r <= spatial && spatial % r == 0,
                            "ToyBackendConfig: cross-attention resolution must divide spatial");
        }
        detail::require(sa_layers_per_resolution >= 1 && ca_layers_per_resolution >= 1,
                        "ToyBackendConfig: layer counts must be >= 1");
        detail::require(embed_dim >= 1, "ToyBackendConfig: embed_dim must be >= 1");
        detail::require(max_timestep >= 1, "ToyBackendConfig: max_timestep must be >= 1");
    }
};

namespace detail {

// Uniform doubles built directly from mt19937_64 output bits. Using the raw
// engine keeps generated weights bit-identical across standard library
// versions, which std::uniform_real_distribution does not guarantee.
class BitUniform {
public:
    explicit BitUniform(std::uint64_t seed) : engine_(seed) {}

    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double symmetric(double scale) { return scale * (2.0 * unit() - 1.0); }

    Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols, double scale) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = symmetric(scale);
        }
        return m;
    }

    Eigen::VectorXd vector(Eigen::Index size, double scale) {
        Eigen::VectorXd v(size);
        for (Eigen::Index i = 0; i < size; ++i) v[i] = symmetric(scale);
        return v;
    }

private:
    std::mt19937_64 engine_;
};

inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace detail

// Small deterministic stand-in for a latent diffusion U-Net. Each attention
// layer average-pools the latent to its resolution, projects the pooled cells
// to queries/keys/values, runs scaled dot-product attention, and feeds the
// attention output through a linear readout; the noise prediction is the
// mean of all layer readouts, block-upsampled to the latent size. Every
// operation is smooth in the latent, so attention-constraint gradients exist
// everywhere and can be computed in closed form.
class ToyBackend final : public DiffusionBackend {
public:
    ToyBackend(std::uint64_t seed, ToyBackendConfig config)
        : seed_(seed), config_(std::move(config)) {
        config_.validate();
        info_.id = "toy";
        info_.channels = config_.channels;
        info_.height = config_.spatial;
        info_.width = config_.spatial;
        info_.max_timestep = config_.max_timestep;
        info_.sa_resolutions = config_.sa_resolutions;
        info_.ca_resolutions = config_.ca_resolutions;
        info_.sa_layers_per_resolution = config_.sa_layers_per_resolution;
        info_.ca_layers_per_resolution = config_.ca_layers_per_resolution;
        info_.embed_dim = config_.embed_dim;
        generate_weights();
    }

    const BackendInfo& info() const override { return info_; }

    const ToyBackendConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    PromptEncoding encode_prompt(std::string_view text) const override {
        PromptEncoding encoding;
        encoding.token_strings = tokenize(text);
        if (encoding.token_strings.empty()) return unconditional_prompt();
        encoding.token_embeddings.resize(
            static_cast<Eigen::Index>(encoding.token_strings.size()), config_.embed_dim);
        for (std::size_t i = 0; i < encoding.token_strings.size(); ++i) {
            detail::BitUniform rng(
                detail::splitmix64(seed_ ^ detail::fnv1a64(encoding.token_strings[i])));
            encoding.token_embeddings.row(static_cast<Eigen::Index>(i)) =
                rng.vector(config_.embed_dim, 1.0).transpose();
        }
        return encoding;
    }

    // The unconditional pass sees a single zero embedding, which makes its
    // cross-attention uniform and its noise prediction prompt-independent.
    PromptEncoding unconditional_prompt() const override {
        PromptEncoding encoding;
        encoding.token_strings = {""};
        encoding.token_embeddings = Eigen::MatrixXd::Zero(1, config_.embed_dim);
        return encoding;
    }

    NoisePrediction predict_noise(const LatentGrid& z, int t, const PromptEncoding& prompt,
                                  const CaptureConfig& capture) const override {
        check_query(z, t);
        check_capture(capture);
        check_prompt(prompt);

        NoisePrediction prediction;
        prediction.eps = Eigen::VectorXd::Zero(z.size());
        prediction.bundle.source_pass = capture.capture_pass;
        const double tf = time_factor(t);

        for (const SaLayer& layer : sa_layers_) {
            Eigen::MatrixXd x = pool(z, layer.resolution);
            Eigen::MatrixXd q = x * layer.wq;
            Eigen::MatrixXd k = x * layer.wk;
            Eigen::MatrixXd a = row_softmax(q * k.transpose() * (tf / sqrt_dim()));
            add_readout(z, layer.resolution, a * (x * layer.wv), layer.wo, layer.bias,
                        prediction.eps);
            if (capture.sa_resolutions.empty() || capture.sa_resolutions.count(layer.resolution)) {
                prediction.bundle.sa_layers.push_back({layer.id, layer.resolution, std::move(a)});
            }
        }
        Eigen::MatrixXd embeddings = prompt.token_embeddings;
        for (const CaLayer& layer : ca_layers_) {
            Eigen::MatrixXd x = pool(z, layer.resolution);
            Eigen::MatrixXd q = x * layer.wq;
            Eigen::MatrixXd k = embeddings * layer.wk;
            Eigen::MatrixXd a = row_softmax(q * k.transpose() * (tf / sqrt_dim()));
            add_readout(z, layer.resolution, a * (embeddings * layer.wv), layer.wo, layer.bias,
                        prediction.eps);
            if (capture.ca_resolutions.empty() || capture.ca_resolutions.count(layer.resolution)) {
                prediction.bundle.ca_layers.push_back({layer.id, layer.resolution, std::move(a)});
            }
        }
        prediction.eps /= static_cast<double>(sa_layers_.size() + ca_layers_.size());
        return prediction;
    }

    Eigen::VectorXd latent_gradient(const LatentGrid& z, int t, const PromptEncoding& prompt,
                                    const ConstraintDescriptor& constraint) const override {
        check_query(z, t);
        check_prompt(prompt);
        constraint.validate();
        switch (constraint.kind) {
            case ConstraintKind::sap:
            case ConstraintKind::region_sap:
                return sa_constraint_gradient(z, t, constraint);
            case ConstraintKind::caa:
                return ca_constraint_gradient(z, t, prompt, constraint);
        }
        throw validation_error("latent_gradient: unknown constraint kind");
    }

    // Lowercased whitespace tokenization with surrounding punctuation
    // stripped; the same normalization is applied to target words before
    // matching them against prompt tokens.
    static std::vector<std::string> tokenize(std::string_view text) {
        std::vector<std::string> tokens;
        std::string current;
        auto flush = [&] {
            std::size_t begin = current.find_first_not_of(kStrippedPunctuation);
            std::size_t end = current.find_last_not_of(kStrippedPunctuation);
            if (begin != std::string::npos) {
                tokens.push_back(current.substr(begin, end - begin + 1));
            }
            current.clear();
        };
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                flush();
            } else {
                current.push_back(
                    static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            }
        }
        flush();
        return tokens;
    }

private:
    struct SaLayer {
        int id = 0;
        int resolution = 0;
        Eigen::MatrixXd wq, wk, wv;  // channels x embed_dim
        Eigen::MatrixXd wo;          // embed_dim x channels
        Eigen::VectorXd bias;        // channels
    };
    struct CaLayer {
        int id = 0;
        int resolution = 0;
        Eigen::MatrixXd wq;      // channels x embed_dim
        Eigen::MatrixXd wk, wv;  // embed_dim x embed_dim
        Eigen::MatrixXd wo;      // embed_dim x channels
        Eigen::VectorXd bias;    // channels
    };

    static constexpr const char* kStrippedPunctuation = ".,;:!?\"'()[]";

    double sqrt_dim() const { return std::sqrt(static_cast<double>(config_.embed_dim)); }

    // Later timesteps sharpen the attention logits slightly so predictions
    // depend smoothly on t.
    double time_factor(int t) const {
        return 1.0 + 0.5 * static_cast<double>(t) / config_.max_timestep;
    }

    void check_prompt(const PromptEncoding& prompt) const {
        prompt.validate();
        detail::require_shape(prompt.token_embeddings.cols() == config_.embed_dim,
                              "ToyBackend: prompt embedding width does not match embed_dim");
    }

    void generate_weights() {
        detail::BitUniform rng(detail::splitmix64(seed_));
        const double channel_scale = std::sqrt(3.0 / config_.channels);
        const double embed_scale = std::sqrt(3.0 / config_.embed_dim);
        int next_id = 0;
        for (int resolution : config_.sa_resolutions) {
            for (int i = 0; i < config_.sa_layers_per_resolution; ++i) {
                SaLayer layer;
                layer.id = next_id++;
                layer.resolution = resolution;
                layer.wq = rng.matrix(config_.channels, config_.embed_dim, channel_scale);
                layer.wk = rng.matrix(config_.channels, config_.embed_dim, channel_scale);
                layer.wv = rng.matrix(config_.channels, config_.embed_dim, channel_scale);
                layer.wo = rng.matrix(config_.embed_dim, config_.channels, embed_scale);
                layer.bias = rng.vector(config_.channels, 0.5);
                sa_layers_.push_back(std::move(layer));
            }
        }
        for (int resolution : config_.ca_resolutions) {
            for (int i = 0; i < config_.ca_layers_per_resolution; ++i) {
                CaLayer layer;
                layer.id = next_id++;
                layer.resolution = resolution;
                layer.wq = rng.matrix(config_.channels, config_.embed_dim, channel_scale);
                layer.wk = rng.matrix(config_.embed_dim, config_.embed_dim, embed_scale);
                layer.wv = rng.matrix(config_.embed_dim, config_.embed_dim, embed_scale);
                layer.wo = rng.matrix(config_.embed_dim, config_.channels, embed_scale);
                layer.bias = rng.vector(config_.channels, 0.5);
                ca_layers_.push_back(std::move(layer));
            }
        }
    }

    // Average-pools the latent to resolution r: returns an (r*r) x channels
    // matrix whose row j = y * r + x holds the block means of each channel.
    Eigen::MatrixXd pool(const LatentGrid& z, int resolution) const {
        const int stride = z.height / resolution;
        const double inv_area = 1.0 / (static_cast<double>(stride) * stride);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(resolution) * resolution, z.channels);
        for (int c = 0; c < z.channels; ++c) {
            for (int by = 0; by < resolution; ++by) {
                for (int bx = 0; bx < resolution; ++bx) {
                    double total = 0.0;
                    for (int dy = 0; dy < stride; ++dy) {
                        for (int dx = 0; dx < stride; ++dx) {
                            total += z.at(c, by * stride + dy, bx * stride + dx);
                        }
                    }
                    x(static_cast<Eigen::Index>(by) * resolution + bx, c) = total * inv_area;
                }
            }
        }
        return x;
    }

    void add_readout(const LatentGrid& z, int resolution, const Eigen::MatrixXd& attended,
                     const Eigen::MatrixXd& wo, const Eigen::VectorXd& bias,
                     Eigen::VectorXd& eps) const {
        Eigen::MatrixXd y = attended * wo;
        const int stride = z.height / resolution;
        for (int c = 0; c < z.channels; ++c) {
            for (int yy = 0; yy < z.height; ++yy) {
                for (int xx = 0; xx < z.width; ++xx) {
                    Eigen::Index j =
                        static_cast<Eigen::Index>(yy / stride) * resolution + xx / stride;
                    eps[(static_cast<Eigen::Index>(c) * z.height + yy) * z.width + xx] +=
                        y(j, c) + bias[c];
                }
            }
        }
    }

    // Distributes a gradient with respect to the pooled cells back onto the
    // latent: each latent cell receives its block's gradient divided by the
    // block area.
    void accumulate_unpooled(const Eigen::MatrixXd& grad_pooled, int resolution,
                             Eigen::VectorXd& grad_z, const LatentGrid& z) const {
        const int stride = z.height / resolution;
        const double inv_area = 1.0 / (static_cast<double>(stride) * stride);
        for (int c = 0; c < z.channels; ++c) {
            for (int yy = 0; yy < z.height; ++yy) {
                for (int xx = 0; xx < z.width; ++xx) {
                    Eigen::Index j =
                        static_cast<Eigen::Index>(yy / stride) * resolution + xx / stride;
                    grad_z[(static_cast<Eigen::Index>(c) * z.height + yy) * z.width + xx] +=
                        grad_pooled(j, c) * inv_area;
                }
            }
        }
    }

    Eigen::VectorXd sa_constraint_gradient(const LatentGrid& z, int t,
                                           const ConstraintDescriptor& constraint) const {
        std::set<int> resolutions = constraint.sa_resolutions;
        if (resolutions.empty()) {
            resolutions.insert(info_.sa_resolutions.begin(), info_.sa_resolutions.end());
        }
        for (int r : resolutions) {
            detail::require(std::find(info_.sa_resolutions.begin(), info_.sa_resolutions.end(),
                                      r) != info_.sa_resolutions.end(),
                            "latent_gradient: self-attention resolution " + std::to_string(r) +
                                " not declared by backend");
        }
        std::vector<SAMaskOuter> outers;
        if (constraint.kind == ConstraintKind::region_sap) {
            for (int r : resolutions) {
                outers.push_back(mask_outer(mask_at_resolution(*constraint.mask, r)));
            }
        }

        const double tf = time_factor(t);
        Eigen::VectorXd grad_z = Eigen::VectorXd::Zero(z.size());
        for (const SaLayer& layer : sa_layers_) {
            if (!resolutions.count(layer.resolution)) continue;
            Eigen::MatrixXd x = pool(z, layer.resolution);
            Eigen::MatrixXd q = x * layer.wq;
            Eigen::MatrixXd k = x * layer.wk;
            Eigen::MatrixXd a = row_softmax(q * k.transpose() * (tf / sqrt_dim()));
            AttentionMap current{layer.id, layer.resolution, a};
            const AttentionMap& reference =
                detail::matching_layer(constraint.reference_sa, current, "latent_gradient");
            Eigen::MatrixXd grad_map;
            if (constraint.kind == ConstraintKind::region_sap) {
                const SAMaskOuter* outer = nullptr;
                for (const SAMaskOuter& o : outers) {
                    if (o.resolution == layer.resolution) outer = &o;
                }
                grad_map = region_sa_preservation_map_gradient(reference, current, *outer);
            } else {
                grad_map = sa_preservation_map_gradient(reference, current);
            }
            Eigen::MatrixXd grad_logits =
                row_softmax_backward(a, grad_map) * (tf / sqrt_dim());
            Eigen::MatrixXd grad_x =
                grad_logits * k * layer.wq.transpose() +
                grad_logits.transpose() * q * layer.wk.transpose();
            accumulate_unpooled(grad_x, layer.resolution, grad_z, z);
        }
        return grad_z;
    }

    Eigen::VectorXd ca_constraint_gradient(const LatentGrid& z, int t,
                                           const PromptEncoding& prompt,
                                           const ConstraintDescriptor& constraint) const {
        const int resolution = info_.primary_ca_resolution();
        FlattenedMask flat = mask_at_resolution(*constraint.mask, resolution);
        for (const std::vector<int>& group : constraint.token_groups) {
            for (int idx : group) {
                detail::require(idx >= 0 && idx < prompt.token_count(),
                                "latent_gradient: token index out of range for prompt");
            }
        }

        const double tf = time_factor(t);
        Eigen::MatrixXd embeddings = prompt.token_embeddings;
        std::vector<const CaLayer*> layers;
        std::vector<AttentionMap> maps;
        std::vector<Eigen::MatrixXd> keys;
        std::vector<Eigen::MatrixXd> queries;
        Eigen::MatrixXd x;
        bool pooled = false;
        for (const CaLayer& layer : ca_layers_) {
            if (layer.resolution != resolution) continue;
            if (!pooled) {
                x = pool(z, resolution);
                pooled = true;
            }
            Eigen::MatrixXd q = x * layer.wq;
            Eigen::MatrixXd k = embeddings * layer.wk;
            Eigen::MatrixXd a = row_softmax(q * k.transpose() * (tf / sqrt_dim()));
            layers.push_back(&layer);
            maps.push_back({layer.id, layer.resolution, std::move(a)});
            keys.push_back(std::move(k));
            queries.push_back(std::move(q));
        }
        detail::require(!layers.empty(),
                        "latent_gradient: backend has no cross-attention layers at resolution " +
                            std::to_string(resolution));

        std::vector<Eigen::MatrixXd> map_grads =
            ca_alignment_map_gradients(maps, constraint.token_groups, flat);
        Eigen::VectorXd grad_z = Eigen::VectorXd::Zero(z.size());
        Eigen::MatrixXd grad_x = Eigen::MatrixXd::Zero(x.rows(), x.cols());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Eigen::MatrixXd grad_logits =
                row_softmax_backward(maps[i].map, map_grads[i]) * (tf / sqrt_dim());
            grad_x += grad_logits * keys[i] * layers[i]->wq.transpose();
        }
        accumulate_unpooled(grad_x, resolution, grad_z, z);
        return grad_z;
    }

    std::uint64_t seed_;
    ToyBackendConfig config_;
    BackendInfo info_;
    std::vector<SaLayer> sa_layers_;
    std::vector<CaLayer> ca_layers_;
};

inline std::shared_ptr<const ToyBackend> make_toy_backend(std::uint64_t seed,
                                                          ToyBackendConfig config = {}) {
    return std::make_shared<const ToyBackend>(seed, std::move(config));
}

}  // namespace unifyedit
