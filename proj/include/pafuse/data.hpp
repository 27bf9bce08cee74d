#pragma once

// Dataset files, window extraction, frame-gap statistics, 2D normalization and the
// synthetic articulated-motion generator used for desk-scale experiments.

#include <array>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"

#include "pafuse/skeleton.hpp"

namespace pafuse {

struct Camera {
    double focal = 1000.0;
    double cx = 500.0;
    double cy = 500.0;

    std::array<double, 2> project(double x, double y, double z) const {
        return {focal * x / z + cx, focal * y / z + cy};
    }
    bool operator==(const Camera&) const = default;
};

struct SequenceData {
    std::string id;
    std::vector<std::int64_t> frame_ids;
    Tensor3 kp2d;                 // N x J x 2, pixels
    std::optional<Tensor3> kp3d;  // N x J x 3, millimetres, camera space

    std::size_t frames() const noexcept { return frame_ids.size(); }
    bool operator==(const SequenceData&) const = default;
};

struct DatasetFile {
    SkeletonLayout layout;
    double image_width = 1000.0;
    double image_height = 1000.0;
    std::optional<Camera> camera;
    std::vector<SequenceData> sequences;

    bool operator==(const DatasetFile&) const = default;
};

namespace detail {

inline std::string where(const std::string& seq, std::size_t frame) {
    return "sequence '" + seq + "', frame position " + std::to_string(frame);
}

inline Tensor3 read_points(const nlohmann::json& j, std::size_t joints, std::size_t dims,
                           const std::string& seq, std::size_t frame, const char* key) {
    if (!j.is_array()) throw DataError(where(seq, frame) + ": '" + key + "' must be an array");
    if (j.size() != joints) {
        throw DataError(where(seq, frame) + ": '" + key + "' has " + std::to_string(j.size()) +
                        " joints, layout expects " + std::to_string(joints));
    }
    Tensor3 out(1, joints, dims);
    for (std::size_t k = 0; k < joints; ++k) {
        const auto& p = j[k];
        if (!p.is_array() || p.size() != dims) {
            throw DataError(where(seq, frame) + ": '" + key + "' joint " + std::to_string(k) + " must have " +
                            std::to_string(dims) + " coordinates");
        }
        for (std::size_t d = 0; d < dims; ++d) {
            if (!p[d].is_number()) {
                throw DataError(where(seq, frame) + ": '" + key + "' joint " + std::to_string(k) +
                                " has a non-numeric coordinate");
            }
            const double v = p[d].get<double>();
            if (!std::isfinite(v)) {
                throw DataError(where(seq, frame) + ": '" + key + "' joint " + std::to_string(k) +
                                " is not finite");
            }
            out(0, k, d) = v;
        }
    }
    return out;
}

inline nlohmann::ordered_json write_points(const Tensor3& t, std::size_t n) {
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < t.joints; ++k) {
        nlohmann::ordered_json p = nlohmann::ordered_json::array();
        for (std::size_t d = 0; d < t.dims; ++d) p.push_back(t(n, k, d));
        pts.push_back(std::move(p));
    }
    return pts;
}

inline void copy_frame(const Tensor3& src, Tensor3& dst, std::size_t n) {
    std::copy(src.values.begin(), src.values.end(), dst.values.begin() + static_cast<std::ptrdiff_t>(n * src.size()));
}

}  // namespace detail

/// Checks every DatasetFile invariant; messages name the sequence and frame position.
inline void validate_dataset(const DatasetFile& ds) {
    const std::size_t J = ds.layout.total_joints();
    if (!(ds.image_width > 0.0) || !(ds.image_height > 0.0)) throw DataError("image_size must be positive");
    for (const auto& s : ds.sequences) {
        const std::size_t N = s.frame_ids.size();
        if (s.kp2d.frames != N || s.kp2d.joints != J || s.kp2d.dims != 2) {
            throw DataError("sequence '" + s.id + "': kp2d has shape " + shape_string(s.kp2d) + ", expected " +
                            std::to_string(N) + "x" + std::to_string(J) + "x2");
        }
        if (s.kp3d && (s.kp3d->frames != N || s.kp3d->joints != J || s.kp3d->dims != 3)) {
            throw DataError("sequence '" + s.id + "': kp3d has shape " + shape_string(*s.kp3d));
        }
        for (std::size_t i = 1; i < N; ++i) {
            if (s.frame_ids[i] <= s.frame_ids[i - 1]) {
                throw DataError(detail::where(s.id, i) + ": frame_id " + std::to_string(s.frame_ids[i]) +
                                " does not increase (previous " + std::to_string(s.frame_ids[i - 1]) + ")");
            }
        }
        if (!all_finite(s.kp2d) || (s.kp3d && !all_finite(*s.kp3d))) {
            throw DataError("sequence '" + s.id + "': non-finite coordinates");
        }
    }
}

inline nlohmann::ordered_json dataset_to_json(const DatasetFile& ds) {
    nlohmann::ordered_json j;
    const auto layout = layout_to_json(ds.layout);
    j["layout"] = nlohmann::ordered_json{{"total_joints", layout["total_joints"]}, {"parts", nlohmann::ordered_json::array()}};
    for (const auto& p : ds.layout.parts()) {
        j["layout"]["parts"].push_back({{"name", p.name}, {"joints", p.joints}, {"root", p.root}});
    }
    j["image_size"] = {ds.image_width, ds.image_height};
    if (ds.camera) j["camera"] = {{"focal", ds.camera->focal}, {"cx", ds.camera->cx}, {"cy", ds.camera->cy}};
    j["sequences"] = nlohmann::ordered_json::array();
    for (const auto& s : ds.sequences) {
        nlohmann::ordered_json frames = nlohmann::ordered_json::array();
        for (std::size_t n = 0; n < s.frames(); ++n) {
            nlohmann::ordered_json f;
            f["frame_id"] = s.frame_ids[n];
            f["kp2d"] = detail::write_points(s.kp2d, n);
            if (s.kp3d) f["kp3d"] = detail::write_points(*s.kp3d, n);
            frames.push_back(std::move(f));
        }
        j["sequences"].push_back({{"id", s.id}, {"frames", std::move(frames)}});
    }
    return j;
}

inline DatasetFile dataset_from_json(const nlohmann::json& j) {
    DatasetFile ds;
    try {
        ds.layout = layout_from_json(j.at("layout"));
    } catch (const ConfigError& e) {
        throw DataError(e.what());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset: ") + e.what());
    }
    const std::size_t J = ds.layout.total_joints();
    try {
        const auto& size = j.at("image_size");
        if (!size.is_array() || size.size() != 2) throw DataError("image_size must be [width, height]");
        ds.image_width = size[0].get<double>();
        ds.image_height = size[1].get<double>();
        if (j.contains("camera")) {
            const auto& c = j.at("camera");
            ds.camera = Camera{c.at("focal").get<double>(), c.at("cx").get<double>(), c.at("cy").get<double>()};
        }
        for (const auto& sj : j.at("sequences")) {
            SequenceData s;
            s.id = sj.at("id").get<std::string>();
            const auto& frames = sj.at("frames");
            const std::size_t N = frames.size();
            s.kp2d = Tensor3(N, J, 2);
            bool with3d = N > 0 && frames[0].contains("kp3d");
            if (with3d) s.kp3d = Tensor3(N, J, 3);
            for (std::size_t n = 0; n < N; ++n) {
                const auto& f = frames[n];
                if (!f.contains("frame_id") || !f["frame_id"].is_number_integer()) {
                    throw DataError(detail::where(s.id, n) + ": missing integer frame_id");
                }
                s.frame_ids.push_back(f["frame_id"].get<std::int64_t>());
                if (!f.contains("kp2d")) throw DataError(detail::where(s.id, n) + ": missing kp2d");
                detail::copy_frame(detail::read_points(f["kp2d"], J, 2, s.id, n, "kp2d"), s.kp2d, n);
                if (f.contains("kp3d") != with3d) {
                    throw DataError(detail::where(s.id, n) + ": kp3d must be given for all frames or none");
                }
                if (with3d) detail::copy_frame(detail::read_points(f["kp3d"], J, 3, s.id, n, "kp3d"), *s.kp3d, n);
            }
            ds.sequences.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset: ") + e.what());
    }
    validate_dataset(ds);
    return ds;
}

inline DatasetFile load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("dataset " + path + ": " + e.what());
    }
    return dataset_from_json(j);
}

inline std::string dataset_to_string(const DatasetFile& ds) { return dataset_to_json(ds).dump() + "\n"; }

inline void save_dataset(const DatasetFile& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset " + path);
    out << dataset_to_string(ds);
    if (!out) throw DataError("failed writing dataset " + path);
}

struct Window {
    std::string sequence_id;
    std::size_t start = 0;  // annotation offset inside the sequence
    std::vector<std::int64_t> frame_ids;
    Tensor3 kp2d;
    std::optional<Tensor3> kp3d;
};

namespace detail {
inline Tensor3 slice_frames(const Tensor3& t, std::size_t start, std::size_t count) {
    Tensor3 out(count, t.joints, t.dims);
    const std::size_t stride = t.joints * t.dims;
    std::copy(t.values.begin() + static_cast<std::ptrdiff_t>(start * stride),
              t.values.begin() + static_cast<std::ptrdiff_t>((start + count) * stride), out.values.begin());
    return out;
}
}  // namespace detail

/// Windows of N consecutive annotated frames at offsets 0, stride, 2 * stride, ...
/// Frame-id gaps inside a window are kept.
inline std::vector<Window> make_windows(const SequenceData& seq, std::size_t length, std::size_t stride) {
    if (length < 1) throw ConfigError("make_windows: window length must be positive");
    if (stride < 1) throw ConfigError("make_windows: stride must be positive");
    std::vector<Window> out;
    for (std::size_t start = 0; start + length <= seq.frames(); start += stride) {
        Window w;
        w.sequence_id = seq.id;
        w.start = start;
        w.frame_ids.assign(seq.frame_ids.begin() + static_cast<std::ptrdiff_t>(start),
                           seq.frame_ids.begin() + static_cast<std::ptrdiff_t>(start + length));
        w.kp2d = detail::slice_frames(seq.kp2d, start, length);
        if (seq.kp3d) w.kp3d = detail::slice_frames(*seq.kp3d, start, length);
        out.push_back(std::move(w));
    }
    return out;
}

using GapHistogram = std::map<std::int64_t, std::size_t>;

inline GapHistogram gap_histogram(const std::vector<std::int64_t>& frame_ids) {
    GapHistogram h;
    for (std::size_t i = 1; i < frame_ids.size(); ++i) ++h[frame_ids[i] - frame_ids[i - 1]];
    return h;
}

/// Pixels -> [-1, 1]: centre on the image centre, divide by half the larger side.
inline Tensor3 normalize_2d(const Tensor3& kp2d, double width, double height) {
    const double half = std::max(width, height) / 2.0;
    Tensor3 out = kp2d;
    for (std::size_t i = 0; i < out.size(); i += 2) {
        out.values[i] = (kp2d.values[i] - width / 2.0) / half;
        out.values[i + 1] = (kp2d.values[i + 1] - height / 2.0) / half;
    }
    return out;
}

inline Tensor3 denormalize_2d(const Tensor3& uv, double width, double height) {
    const double half = std::max(width, height) / 2.0;
    Tensor3 out = uv;
    for (std::size_t i = 0; i < out.size(); i += 2) {
        out.values[i] = uv.values[i] * half + width / 2.0;
        out.values[i + 1] = uv.values[i + 1] * half + height / 2.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
    std::size_t sequences = 8;
    std::size_t frames = 200;
    double amplitude = 1.0;
    double focal = 1000.0;
    std::uint64_t seed = 42;
    std::int64_t frame_stride = 5;
    bool uneven = false;  // long-tailed frame-id gaps instead of a fixed stride
    double image_width = 1000.0;
    double image_height = 1000.0;
    double depth = 4500.0;  // body root distance from the camera, mm

    void validate() const {
        if (sequences < 1) throw ConfigError("synth: sequence count must be positive");
        if (frames < 1) throw ConfigError("synth: frame count must be positive");
        if (!(focal > 0.0)) throw ConfigError("synth: focal length must be positive");
        if (frame_stride < 1) throw ConfigError("synth: frame stride must be positive");
        if (!(amplitude >= 0.0)) throw ConfigError("synth: amplitude must be non-negative");
        if (!(image_width > 0.0) || !(image_height > 0.0)) throw ConfigError("synth: image size must be positive");
        if (!(depth > 0.0)) throw ConfigError("synth: depth must be positive");
    }
};

namespace detail {

using Vec3 = std::array<double, 3>;

// Body template around the hip centre; x right, y down, z away from the camera.
inline const std::array<Vec3, 23>& body_template() {
    static const std::array<Vec3, 23> t = {{
        {0, 0, 0},          // 0 hip centre
        {0, -600, -90},     // 1 nose
        {35, -640, -60},    // 2 left eye
        {-35, -640, -60},   // 3 right eye
        {0, -480, 0},       // 4 neck
        {0, -280, 10},      // 5 chest
        {180, -450, 0},     // 6 left shoulder
        {-180, -450, 0},    // 7 right shoulder
        {230, -180, 20},    // 8 left elbow
        {-230, -180, 20},   // 9 right elbow
        {250, 60, -40},     // 10 left wrist
        {-250, 60, -40},    // 11 right wrist
        {100, 0, 0},        // 12 left hip
        {-100, 0, 0},       // 13 right hip
        {110, 420, -20},    // 14 left knee
        {-110, 420, -20},   // 15 right knee
        {0, -720, -10},     // 16 head top
        {110, 820, 0},      // 17 left ankle
        {-110, 820, 0},     // 18 right ankle
        {120, 860, -120},   // 19 left toe
        {-120, 860, -120},  // 20 right toe
        {105, 870, 40},     // 21 left heel
        {-105, 870, 40},    // 22 right heel
    }};
    return t;
}

// Joint whose displacement each body joint follows (head and feet move as units).
inline constexpr std::array<std::size_t, 23> kMotionSource = {0, 4, 4, 4, 4, 5, 6, 7, 8, 9, 10, 11,
                                                             12, 13, 14, 15, 4, 17, 18, 17, 18, 17, 18};
inline constexpr std::array<double, 23> kMotionScale = {0, 0, 0, 0, 30, 20, 40, 40, 90, 90, 160, 160,
                                                        10, 10, 70, 70, 0, 90, 90, 0, 0, 0, 0};

// 68 facial landmarks relative to the nose tip.
inline std::vector<Vec3> face_template() {
    std::vector<Vec3> pts;
    for (int i = 0; i < 17; ++i) {  // jaw line
        const double a = std::numbers::pi * (0.1 + 0.8 * i / 16.0);
        pts.push_back({-70.0 * std::cos(a), 10.0 + 60.0 * std::sin(a) - 20.0, 60.0 - 50.0 * std::sin(a)});
    }
    for (int side : {-1, 1}) {  // brows
        for (int i = 0; i < 5; ++i) pts.push_back({side * (15.0 + 10.0 * i), -55.0 + 2.0 * std::abs(i - 2), 25.0});
    }
    for (int i = 0; i < 4; ++i) pts.push_back({0.0, -40.0 + 10.0 * i, 10.0 - 3.0 * i});  // nose bridge
    for (int i = 0; i < 5; ++i) pts.push_back({-16.0 + 8.0 * i, 12.0, 12.0});           // nostrils
    for (int side : {-1, 1}) {  // eyes
        for (int i = 0; i < 6; ++i) {
            const double a = 2.0 * std::numbers::pi * i / 6.0;
            pts.push_back({side * 32.0 + 12.0 * std::cos(a), -38.0 + 5.0 * std::sin(a), 30.0});
        }
    }
    for (int i = 0; i < 12; ++i) {  // outer lip
        const double a = 2.0 * std::numbers::pi * i / 12.0;
        pts.push_back({25.0 * std::cos(a), 35.0 + 10.0 * std::sin(a), 18.0});
    }
    for (int i = 0; i < 8; ++i) {  // inner lip
        const double a = 2.0 * std::numbers::pi * i / 8.0;
        pts.push_back({16.0 * std::cos(a), 35.0 + 4.0 * std::sin(a), 20.0});
    }
    return pts;
}

// 21 hand points relative to the wrist: the wrist itself then four joints per finger.
inline std::vector<Vec3> hand_template(double side) {
    std::vector<Vec3> pts{{0, 0, 0}};
    for (int f = 0; f < 5; ++f) {
        const double spread = (f - 2) * 18.0;
        for (int k = 1; k <= 4; ++k) {
            const double len = (f == 0 ? 22.0 : 28.0) * k;
            pts.push_back({side * (spread + (f == 0 ? 25.0 : 0.0)), 40.0 + len, (f == 0 ? -15.0 : 0.0)});
        }
    }
    return pts;
}

inline Vec3 rotate_y(const Vec3& p, double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]};
}

inline Vec3 rotate_x(const Vec3& p, double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {p[0], c * p[1] - s * p[2], s * p[1] + c * p[2]};
}

struct Oscillator {
    double amp, freq, phase;
    double operator()(double t) const { return amp * std::sin(freq * t + phase); }
};

}  // namespace detail

/// Seeded synthetic dataset on the default layout: sinusoidal body motion around a
/// template, a rigid face cloud on the nose, rigid hand clouds on the wrists with small
/// articulation noise, and pinhole projection into the image.
inline DatasetFile synth_generate(const SynthConfig& cfg) {
    using detail::Vec3;
    cfg.validate();
    DatasetFile ds;
    ds.layout = default_layout();
    ds.image_width = cfg.image_width;
    ds.image_height = cfg.image_height;
    ds.camera = Camera{cfg.focal, cfg.image_width / 2.0, cfg.image_height / 2.0};
    const auto& body = detail::body_template();
    const auto face = detail::face_template();
    const auto left = detail::hand_template(1.0);
    const auto right = detail::hand_template(-1.0);
    const double amp = cfg.amplitude;

    for (std::size_t s = 0; s < cfg.sequences; ++s) {
        std::mt19937_64 rng(derive_seed(cfg.seed, s));
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        std::uniform_real_distribution<double> freq(0.4, 1.6);
        std::normal_distribution<double> jitter(0.0, 1.5);
        auto osc = [&](double a) { return detail::Oscillator{a, freq(rng), phase(rng)}; };

        const auto yaw = osc(0.6), pitch = osc(0.15), head_yaw = osc(0.35), head_pitch = osc(0.2);
        const auto root_x = osc(300.0), root_y = osc(30.0), root_z = osc(300.0);
        const auto lhand_a = osc(0.6), rhand_a = osc(0.6), lhand_b = osc(0.4), rhand_b = osc(0.4);
        std::array<std::array<detail::Oscillator, 3>, 23> joint_osc;
        for (std::size_t j = 0; j < 23; ++j)
            for (auto& o : joint_osc[j]) o = osc(detail::kMotionScale[j]);

        SequenceData seq;
        seq.id = "seq" + std::string(s < 10 ? "00" : (s < 100 ? "0" : "")) + std::to_string(s);
        std::int64_t fid = 0;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t n = 0; n < cfg.frames; ++n) {
            if (n > 0) {
                std::int64_t gap = cfg.frame_stride;
                if (cfg.uneven && unit(rng) < 0.15) gap = cfg.frame_stride * (2 + static_cast<std::int64_t>(unit(rng) * 30));
                fid += gap;
            }
            seq.frame_ids.push_back(fid);
        }
        seq.kp2d = Tensor3(cfg.frames, 133, 2);
        seq.kp3d = Tensor3(cfg.frames, 133, 3);
        Tensor3& kp3d = *seq.kp3d;

        for (std::size_t n = 0; n < cfg.frames; ++n) {
            const double t = static_cast<double>(seq.frame_ids[n]) / 50.0;
            const Vec3 root{amp * root_x(t), amp * root_y(t), cfg.depth + amp * root_z(t)};
            const double body_yaw = amp * yaw(t), body_pitch = amp * pitch(t);
            std::array<Vec3, 23> local{};
            for (std::size_t j = 0; j < 23; ++j) {
                const auto& src = joint_osc[detail::kMotionSource[j]];
                local[j] = body[j];
                for (std::size_t d = 0; d < 3; ++d) local[j][d] += amp * src[d](t);
            }
            auto place = [&](const Vec3& p) {
                const Vec3 r = detail::rotate_y(detail::rotate_x(p, body_pitch), body_yaw);
                return Vec3{root[0] + r[0], root[1] + r[1], root[2] + r[2]};
            };
            auto put = [&](std::size_t j, const Vec3& p) {
                for (std::size_t d = 0; d < 3; ++d) kp3d(n, j, d) = p[d];
            };
            for (std::size_t j = 0; j < 23; ++j) put(j, place(local[j]));
            const double hy = amp * head_yaw(t), hp = amp * head_pitch(t);
            for (std::size_t k = 0; k < face.size(); ++k) {
                const Vec3 f = detail::rotate_y(detail::rotate_x(face[k], hp), hy);
                put(23 + k, place({local[1][0] + f[0], local[1][1] + f[1], local[1][2] + f[2]}));
            }
            auto hand = [&](const std::vector<Vec3>& tmpl, std::size_t wrist, std::size_t first,
                            const detail::Oscillator& a, const detail::Oscillator& b) {
                for (std::size_t k = 0; k < tmpl.size(); ++k) {
                    Vec3 h = detail::rotate_y(detail::rotate_x(tmpl[k], amp * a(t)), amp * b(t));
                    if (k > 0) {
                        for (double& c : h) c += amp * jitter(rng);
                    }
                    put(first + k, place({local[wrist][0] + h[0], local[wrist][1] + h[1], local[wrist][2] + h[2]}));
                }
            };
            hand(left, 10, 91, lhand_a, lhand_b);
            hand(right, 11, 112, rhand_a, rhand_b);
            for (std::size_t j = 0; j < 133; ++j) {
                const auto uv = ds.camera->project(kp3d(n, j, 0), kp3d(n, j, 1), kp3d(n, j, 2));
                seq.kp2d(n, j, 0) = uv[0];
                seq.kp2d(n, j, 1) = uv[1];
            }
        }
        ds.sequences.push_back(std::move(seq));
    }
    validate_dataset(ds);
    return ds;
}

}  // namespace pafuse
