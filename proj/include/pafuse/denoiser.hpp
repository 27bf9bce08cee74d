#pragma once

// Part-specific conditional denoiser: alternating spatial (joints within a frame) and
// temporal (frames of a joint) attention blocks over N * J_part tokens, predicting the
// clean scaled local part directly.

#include <algorithm>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pafuse/autodiff.hpp"
#include "pafuse/common.hpp"
#include "pafuse/diffusion.hpp"

namespace pafuse {

struct DenoiserConfig {
    static constexpr std::size_t kInChannels = 5;   // 3 noisy 3D + 2 conditioning 2D
    static constexpr std::size_t kOutChannels = 3;

    std::string part;
    std::size_t joints = 0;
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t depth = 0;

    void validate() const {
        if (joints == 0) throw ConfigError("denoiser '" + part + "': joint count must be positive");
        if (frames == 0) throw ConfigError("denoiser '" + part + "': frame count must be positive");
        if (channels < 4) throw ConfigError("denoiser '" + part + "': channel width must be at least 4");
        if (channels % 2 != 0) throw ConfigError("denoiser '" + part + "': channel width must be even");
        if (depth < 1) throw ConfigError("denoiser '" + part + "': depth must be at least 1");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

struct ParameterShape {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

enum class Init { Zero, One, Uniform };

namespace detail {

struct ShapeInit {
    ParameterShape shape;
    Init init;
};

inline std::vector<ShapeInit> parameter_plan(const DenoiserConfig& c) {
    const std::size_t C = c.channels;
    std::vector<ShapeInit> plan;
    auto add = [&](std::string name, std::size_t r, std::size_t k, Init init) {
        plan.push_back({{std::move(name), r, k}, init});
    };
    add("embed.weight", DenoiserConfig::kInChannels, C, Init::Uniform);
    add("embed.bias", 1, C, Init::Zero);
    add("pos.frame", c.frames, C, Init::Uniform);
    add("pos.joint", c.joints, C, Init::Uniform);
    for (std::size_t l = 0; l < c.depth; ++l) {
        for (const char* mix : {"spatial", "temporal"}) {
            const std::string p = "block" + std::to_string(l) + "." + mix + ".";
            add(p + "norm1.gain", 1, C, Init::One);
            add(p + "norm1.bias", 1, C, Init::Zero);
            for (const char* proj : {"query", "key", "value", "out"}) {
                add(p + proj + ".weight", C, C, Init::Uniform);
                add(p + proj + ".bias", 1, C, Init::Zero);
            }
            add(p + "norm2.gain", 1, C, Init::One);
            add(p + "norm2.bias", 1, C, Init::Zero);
            add(p + "ff1.weight", C, 2 * C, Init::Uniform);
            add(p + "ff1.bias", 1, 2 * C, Init::Zero);
            add(p + "ff2.weight", 2 * C, C, Init::Uniform);
            add(p + "ff2.bias", 1, C, Init::Zero);
        }
    }
    add("head.norm.gain", 1, C, Init::One);
    add("head.norm.bias", 1, C, Init::Zero);
    add("head.weight", C, DenoiserConfig::kOutChannels, Init::Zero);
    add("head.bias", 1, DenoiserConfig::kOutChannels, Init::Zero);
    return plan;
}

}  // namespace detail

inline std::vector<ParameterShape> parameter_shapes(const DenoiserConfig& config) {
    std::vector<ParameterShape> out;
    for (auto& s : detail::parameter_plan(config)) out.push_back(std::move(s.shape));
    return out;
}

struct NamedArray {
    std::string name;
    ad::Matrix value;
};

class Denoiser {
public:
    Denoiser() = default;
    Denoiser(DenoiserConfig config, std::vector<NamedArray> params)
        : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        const auto shapes = parameter_shapes(config_);
        if (shapes.size() != params_.size()) {
            throw ConfigError("denoiser '" + config_.part + "': expected " + std::to_string(shapes.size()) +
                              " parameter arrays, got " + std::to_string(params_.size()));
        }
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const auto& p = params_[i];
            if (p.name != shapes[i].name || static_cast<std::size_t>(p.value.rows()) != shapes[i].rows ||
                static_cast<std::size_t>(p.value.cols()) != shapes[i].cols) {
                throw ConfigError("denoiser '" + config_.part + "': parameter '" + p.name +
                                  "' does not match the configuration");
            }
        }
        build_token_maps();
    }

    const DenoiserConfig& config() const noexcept { return config_; }
    const std::vector<NamedArray>& parameters() const noexcept { return params_; }
    std::vector<NamedArray>& parameters() noexcept { return params_; }

    /// Parameters registered on a tape, in parameters() order.
    using Bound = std::vector<ad::Var>;

    Bound bind(ad::Tape& tape, bool trainable = true) const {
        Bound b;
        b.reserve(params_.size());
        for (const auto& p : params_) b.push_back(trainable ? tape.parameter(p.value) : tape.constant(p.value));
        return b;
    }

    /// Builds the network graph for one (N * J) x 5 conditioned input; returns (N * J) x 3.
    ad::Var forward(ad::Tape& tape, const Bound& w, int t, const ad::Matrix& input) const {
        const std::size_t tokens = config_.frames * config_.joints;
        if (static_cast<std::size_t>(input.rows()) != tokens ||
            static_cast<std::size_t>(input.cols()) != DenoiserConfig::kInChannels) {
            throw ShapeError("denoiser '" + config_.part + "': input must be " + std::to_string(tokens) +
                             "x5");
        }
        std::size_t at = 0;
        auto next = [&] { return w[at++]; };
        const ad::Var embed_w = next(), embed_b = next(), pos_frame = next(), pos_joint = next();

        ad::Var h = tape.add_row(tape.matmul(tape.constant(input), embed_w), embed_b);
        const auto temb = timestep_embedding(static_cast<double>(t), config_.channels);
        ad::Matrix temb_row(1, static_cast<Eigen::Index>(config_.channels));
        for (std::size_t i = 0; i < temb.size(); ++i) temb_row(0, static_cast<Eigen::Index>(i)) = temb[i];
        h = tape.add_row(h, tape.constant(std::move(temb_row)));
        h = tape.add(h, tape.gather_rows(pos_frame, frame_of_token_));
        h = tape.add(h, tape.gather_rows(pos_joint, joint_of_token_));

        for (std::size_t l = 0; l < config_.depth; ++l) {
            for (const ad::TokenGroups* groups : {&spatial_, &temporal_}) {
                const ad::Var n1g = next(), n1b = next();
                const ad::Var qw = next(), qb = next(), kw = next(), kb = next();
                const ad::Var vw = next(), vb = next(), ow = next(), ob = next();
                const ad::Var n2g = next(), n2b = next();
                const ad::Var f1w = next(), f1b = next(), f2w = next(), f2b = next();

                const ad::Var x = tape.layer_norm(h, n1g, n1b);
                const ad::Var q = tape.add_row(tape.matmul(x, qw), qb);
                const ad::Var k = tape.add_row(tape.matmul(x, kw), kb);
                const ad::Var v = tape.add_row(tape.matmul(x, vw), vb);
                const ad::Var a = tape.attention(q, k, v, *groups);
                h = tape.add(h, tape.add_row(tape.matmul(a, ow), ob));

                const ad::Var y = tape.layer_norm(h, n2g, n2b);
                const ad::Var f = tape.gelu(tape.add_row(tape.matmul(y, f1w), f1b));
                h = tape.add(h, tape.add_row(tape.matmul(f, f2w), f2b));
            }
        }
        const ad::Var hg = next(), hb = next(), head_w = next(), head_b = next();
        return tape.add_row(tape.matmul(tape.layer_norm(h, hg, hb), head_w), head_b);
    }

    /// Clean-signal estimate for one part: (t, x2d N x J x 2, y_t N x J x 3) -> N x J x 3.
    Tensor3 predict(int t, const Tensor3& x2d, const Tensor3& y_t) const {
        ad::Tape tape;
        const Bound w = bind(tape, false);
        const ad::Var out = forward(tape, w, t, pack_input(x2d, y_t));
        return unpack_output(tape.value(out), config_.frames, config_.joints);
    }

    /// Row n * J + j holds (y_t xyz, x2d uv) of joint j in frame n.
    ad::Matrix pack_input(const Tensor3& x2d, const Tensor3& y_t) const {
        if (x2d.frames != config_.frames || x2d.joints != config_.joints || x2d.dims != 2) {
            throw ShapeError("denoiser '" + config_.part + "': 2D input has shape " + shape_string(x2d));
        }
        if (y_t.frames != config_.frames || y_t.joints != config_.joints || y_t.dims != 3) {
            throw ShapeError("denoiser '" + config_.part + "': noisy 3D input has shape " + shape_string(y_t));
        }
        return pack_conditioned(x2d, y_t);
    }

    static ad::Matrix pack_conditioned(const Tensor3& x2d, const Tensor3& y_t) {
        ad::Matrix in(static_cast<Eigen::Index>(y_t.frames * y_t.joints), 5);
        for (std::size_t n = 0; n < y_t.frames; ++n) {
            for (std::size_t j = 0; j < y_t.joints; ++j) {
                const auto r = static_cast<Eigen::Index>(n * y_t.joints + j);
                in(r, 0) = y_t(n, j, 0);
                in(r, 1) = y_t(n, j, 1);
                in(r, 2) = y_t(n, j, 2);
                in(r, 3) = x2d(n, j, 0);
                in(r, 4) = x2d(n, j, 1);
            }
        }
        return in;
    }

    static Tensor3 unpack_output(const ad::Matrix& m, std::size_t frames, std::size_t joints) {
        Tensor3 out(frames, joints, 3);
        std::copy(m.data(), m.data() + m.size(), out.values.begin());
        return out;
    }

    static ad::Matrix to_rows(const Tensor3& t) {
        ad::Matrix m(static_cast<Eigen::Index>(t.frames * t.joints), static_cast<Eigen::Index>(t.dims));
        std::copy(t.values.begin(), t.values.end(), m.data());
        return m;
    }

private:
    void build_token_maps() {
        const std::size_t N = config_.frames, J = config_.joints;
        frame_of_token_.resize(N * J);
        joint_of_token_.resize(N * J);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t j = 0; j < J; ++j) {
                frame_of_token_[n * J + j] = n;
                joint_of_token_[n * J + j] = j;
            }
        }
        spatial_ = ad::TokenGroups::per_frame(N, J);
        temporal_ = ad::TokenGroups::per_joint(N, J);
    }

    DenoiserConfig config_;
    std::vector<NamedArray> params_;
    std::vector<std::size_t> frame_of_token_;
    std::vector<std::size_t> joint_of_token_;
    ad::TokenGroups spatial_;
    ad::TokenGroups temporal_;
};

/// Weights and positional tables uniform in +-sqrt(6 / (fan_in + fan_out)); biases and the
/// output head start at zero; layer-norm gains at one.
inline Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::vector<NamedArray> params;
    for (const auto& [shape, init] : detail::parameter_plan(config)) {
        ad::Matrix m(static_cast<Eigen::Index>(shape.rows), static_cast<Eigen::Index>(shape.cols));
        switch (init) {
            case Init::Zero: m.setZero(); break;
            case Init::One: m.setOnes(); break;
            case Init::Uniform: {
                const double bound = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
                std::uniform_real_distribution<double> dist(-bound, bound);
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
                break;
            }
        }
        params.push_back({shape.name, std::move(m)});
    }
    return Denoiser(config, std::move(params));
}

inline Tensor3 denoise_predict(const Denoiser& d, int t, const Tensor3& x2d, const Tensor3& y_t) {
    return d.predict(t, x2d, y_t);
}

inline std::size_t count_parameters(const Denoiser& d) {
    std::size_t total = 0;
    for (const auto& p : d.parameters()) total += static_cast<std::size_t>(p.value.size());
    return total;
}

inline std::size_t count_parameters(const DenoiserConfig& c) {
    std::size_t total = 0;
    for (const auto& s : parameter_shapes(c)) total += s.rows * s.cols;
    return total;
}

struct NetworkShape {
    std::size_t joints = 0;
    std::size_t frames = 0;
};

/// Integer widths following `ratios` whose summed parameter count lands within 3% of
/// `target_total`. Widths are even, at least 4, and keep the ratio ordering.
inline std::vector<std::size_t> allocate_channels(std::size_t target_total,
                                                  const std::vector<NetworkShape>& networks,
                                                  std::size_t depth, const std::vector<double>& ratios,
                                                  double tolerance = 0.03) {
    if (networks.empty() || networks.size() != ratios.size()) {
        throw ConfigError("allocate_channels: need one ratio per network");
    }
    for (double r : ratios) {
        if (!(r > 0.0)) throw ConfigError("allocate_channels: ratios must be positive");
    }
    if (depth < 1) throw ConfigError("allocate_channels: depth must be at least 1");
    const std::size_t P = networks.size();
    const std::size_t lead = static_cast<std::size_t>(
        std::max_element(ratios.begin(), ratios.end()) - ratios.begin());

    auto total_for = [&](const std::vector<std::size_t>& widths) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < P; ++i) {
            total += count_parameters(
                DenoiserConfig{"", networks[i].joints, networks[i].frames, widths[i], depth});
        }
        return total;
    };
    auto ordered = [&](const std::vector<std::size_t>& widths) {
        for (std::size_t i = 0; i < P; ++i) {
            if (widths[i] < 4 || widths[i] % 2 != 0) return false;
            for (std::size_t j = 0; j < P; ++j) {
                if (ratios[i] > ratios[j] && widths[i] <= widths[j]) return false;
                if (ratios[i] == ratios[j] && widths[i] != widths[j]) return false;
            }
        }
        return true;
    };

    std::vector<std::size_t> best;
    double best_err = std::numeric_limits<double>::infinity();
    const double target = static_cast<double>(target_total);
    for (std::size_t lead_c = 4;; lead_c += 2) {
        std::vector<std::size_t> base(P);
        for (std::size_t i = 0; i < P; ++i) {
            const double c = static_cast<double>(lead_c) * ratios[i] / ratios[lead];
            base[i] = std::max<std::size_t>(4, 2 * static_cast<std::size_t>(std::llround(c / 2.0)));
        }
        // Nudge each non-lead width by -2, 0 or +2 to fine-tune the total.
        std::size_t combos = 1;
        for (std::size_t i = 0; i + 1 < P; ++i) combos *= 3;
        bool any_below = false;
        for (std::size_t code = 0; code < combos; ++code) {
            std::vector<std::size_t> w = base;
            std::size_t rest = code;
            bool valid = true;
            for (std::size_t i = 0; i < P; ++i) {
                if (i == lead) continue;
                const int step = static_cast<int>(rest % 3) - 1;
                rest /= 3;
                const long long c = static_cast<long long>(w[i]) + 2 * step;
                if (c < 4) valid = false;
                w[i] = static_cast<std::size_t>(std::max<long long>(c, 4));
            }
            if (!valid || !ordered(w)) continue;
            const double total = static_cast<double>(total_for(w));
            if (total <= target) any_below = true;
            const double err = std::abs(total - target) / target;
            if (err < best_err) {
                best_err = err;
                best = w;
            }
        }
        if (!any_below && static_cast<double>(total_for(base)) > 2.0 * target) break;
        if (lead_c > 1 << 16) break;
    }
    if (best.empty() || best_err > tolerance) {
        throw ConfigError("allocate_channels: no widths reach " + std::to_string(target_total) +
                          " parameters within tolerance");
    }
    return best;
}

}  // namespace pafuse
