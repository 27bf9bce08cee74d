#pragma once

// Variance-preserving forward noising with the cosine schedule, sinusoidal
// timestep encoding and deterministic DDIM sampling of pose hypotheses.

#include <concepts>
#include <numbers>
#include <random>

#include "pafuse/common.hpp"
#include "pafuse/parallel.hpp"
#include "pafuse/skeleton.hpp"

namespace pafuse {

struct NoiseSchedule {
    int steps = 1000;
    double offset = 0.008;
    std::vector<double> alpha_bar;  // steps + 1 entries

    double signal(int t) const { return std::sqrt(alpha_bar.at(static_cast<std::size_t>(t))); }
    double noise(int t) const { return std::sqrt(1.0 - alpha_bar.at(static_cast<std::size_t>(t))); }
};

/// alpha_bar[t] = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2).
inline NoiseSchedule cosine_schedule(int steps, double offset = 0.008) {
    if (steps < 1) throw ConfigError("cosine_schedule: step count must be positive");
    if (!(offset > 0.0)) throw ConfigError("cosine_schedule: offset must be positive");
    auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) *
                                  std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule s{steps, offset, std::vector<double>(static_cast<std::size_t>(steps) + 1)};
    const double f0 = f(0);
    for (int t = 0; t <= steps; ++t) s.alpha_bar[static_cast<std::size_t>(t)] = f(t) / f0;
    s.alpha_bar[0] = 1.0;
    return s;
}

inline void require_step(const NoiseSchedule& s, int t, const char* what) {
    if (t < 0 || t > s.steps) {
        throw ConfigError(std::string(what) + ": timestep " + std::to_string(t) +
                          " outside [0, " + std::to_string(s.steps) + "]");
    }
}

/// sqrt(abar_t) * y + sqrt(1 - abar_t) * eps, with eps supplied by the caller.
inline Tensor3 forward_noise(const Tensor3& y, int t, const NoiseSchedule& s, const Tensor3& eps) {
    require_step(s, t, "forward_noise");
    require_same_shape(y, eps, "forward_noise");
    Tensor3 out = y;
    const double a = s.signal(t), b = s.noise(t);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = a * y.values[i] + b * eps.values[i];
    return out;
}

inline Tensor3 standard_normal(std::size_t n, std::size_t j, std::size_t d, std::mt19937_64& rng) {
    Tensor3 out(n, j, d);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : out.values) v = dist(rng);
    return out;
}

inline Tensor3 forward_noise(const Tensor3& y, int t, const NoiseSchedule& s, std::mt19937_64& rng) {
    return forward_noise(y, t, s, standard_normal(y.frames, y.joints, y.dims, rng));
}

/// First half sin(t * w_k), second half cos(t * w_k), w_k geometric from 1 to 1/10000.
inline std::vector<double> timestep_embedding(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) {
        throw ConfigError("timestep_embedding: dimension must be even and positive, got " +
                          std::to_string(dim));
    }
    const std::size_t half = dim / 2;
    std::vector<double> out(dim);
    for (std::size_t k = 0; k < half; ++k) {
        const double w = half == 1 ? 1.0
                                   : std::pow(10000.0, -static_cast<double>(k) /
                                                           static_cast<double>(half - 1));
        out[k] = std::sin(t * w);
        out[half + k] = std::cos(t * w);
    }
    return out;
}

/// Deterministic DDIM update from t to t_next given the clean-signal estimate.
inline Tensor3 ddim_step(const Tensor3& y_t, const Tensor3& y0_hat, int t, int t_next,
                         const NoiseSchedule& s) {
    require_step(s, t, "ddim_step");
    require_step(s, t_next, "ddim_step");
    require_same_shape(y_t, y0_hat, "ddim_step");
    if (t_next == t) return y_t;
    if (t_next > t) throw ConfigError("ddim_step: t_next must not exceed t");
    if (t == 0) throw ConfigError("ddim_step: cannot step from t=0");
    const double a_t = s.signal(t), b_t = s.noise(t);
    const double a_n = s.signal(t_next), b_n = s.noise(t_next);
    Tensor3 out = y0_hat;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double eps = (y_t.values[i] - a_t * y0_hat.values[i]) / b_t;
        out.values[i] = a_n * y0_hat.values[i] + b_n * eps;
    }
    return out;
}

/// K + 1 timesteps uniformly spaced from T down to 0 inclusive.
inline std::vector<int> ddim_timesteps(int steps, int iterations) {
    if (iterations < 1) throw ConfigError("ddim_timesteps: iteration count must be positive");
    std::vector<int> ts(static_cast<std::size_t>(iterations) + 1);
    for (int i = 0; i <= iterations; ++i) {
        ts[static_cast<std::size_t>(i)] = static_cast<int>(
            std::llround(static_cast<double>(steps) * (iterations - i) / iterations));
    }
    return ts;
}

/// Anything producing per-part clean estimates (scaled local frames) from a noisy state.
template <class P>
concept PartPredictor = requires(const P& p, int t, const PartTensors& x) {
    { p.predict(t, x, x) } -> std::convertible_to<PartTensors>;
};

struct HypothesisSet {
    std::vector<Tensor3> poses;  // whole-body, millimetres, body root at origin
    std::vector<std::uint64_t> seeds;

    std::size_t size() const noexcept { return poses.size(); }
};

struct SamplingOptions {
    int iterations = 1;     // K
    int hypotheses = 1;     // H
    std::uint64_t seed = 0;
    double scale = 0.001;   // data scale applied before noising
    std::size_t threads = 1;
};

/// One hypothesis: Gaussian start, K DDIM steps per part, unscale, hierarchical reassembly.
template <PartPredictor P>
Tensor3 sample_one(const P& predictor, const PartTensors& x2d, const SkeletonLayout& layout,
                   const NoiseSchedule& schedule, int iterations, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    PartTensors y;
    for (const auto& part : layout.parts()) {
        auto it = x2d.find(part.name);
        if (it == x2d.end()) throw ShapeError("sample_hypotheses: no 2D input for part '" + part.name + "'");
        y.emplace(part.name, standard_normal(it->second.frames, part.joints.size(), 3, rng));
    }
    const auto ts = ddim_timesteps(schedule.steps, iterations);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        PartTensors y0 = predictor.predict(ts[i], x2d, y);
        for (const auto& part : layout.parts()) {
            auto it = y0.find(part.name);
            if (it == y0.end()) {
                throw ShapeError("sample_hypotheses: missing denoiser output for part '" + part.name + "'");
            }
            y.at(part.name) = ddim_step(y.at(part.name), it->second, ts[i], ts[i + 1], schedule);
        }
    }
    for (auto& [name, t] : y) {
        for (double& v : t.values) v /= scale;
    }
    const RootOffsets offsets = derive_root_offsets_from_body(y.at(layout.body().name), layout);
    return reconstruct_whole_body(y, offsets, layout);
}

template <PartPredictor P>
HypothesisSet sample_hypotheses(const P& predictor, const PartTensors& x2d,
                                const SkeletonLayout& layout, const NoiseSchedule& schedule,
                                const SamplingOptions& opt) {
    if (opt.hypotheses < 1) throw ConfigError("sample_hypotheses: H must be positive");
    if (opt.iterations < 1) throw ConfigError("sample_hypotheses: K must be positive");
    const auto count = static_cast<std::size_t>(opt.hypotheses);
    HypothesisSet set{std::vector<Tensor3>(count), std::vector<std::uint64_t>(count)};
    for (std::size_t h = 0; h < count; ++h) set.seeds[h] = derive_seed(opt.seed, h);
    parallel_for(count, opt.threads, [&](std::size_t h) {
        set.poses[h] = sample_one(predictor, x2d, layout, schedule, opt.iterations, set.seeds[h],
                                  opt.scale);
    });
    return set;
}

}  // namespace pafuse
