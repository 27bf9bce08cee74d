#pragma once

// Training losses, MPJPE evaluation metrics and hypothesis selection/aggregation.

#include <functional>
#include <limits>

#include "json.hpp"

#include "pafuse/diffusion.hpp"
#include "pafuse/skeleton.hpp"

namespace pafuse {

enum class LossKind { Mpjpe, Mse };

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "mpjpe") return LossKind::Mpjpe;
    if (s == "mse") return LossKind::Mse;
    throw ConfigError("unknown loss kind '" + s + "' (expected mpjpe or mse)");
}

inline std::string to_string(LossKind k) { return k == LossKind::Mpjpe ? "mpjpe" : "mse"; }

/// Mean over frames and joints of the per-joint Euclidean error.
inline double mpjpe(const Tensor3& pred, const Tensor3& gt) {
    require_same_shape(pred, gt, "mpjpe");
    if (pred.dims != 3) throw ShapeError("mpjpe: expected 3D coordinates");
    const std::size_t count = pred.frames * pred.joints;
    if (count == 0) throw ShapeError("mpjpe: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double dx = pred.values[3 * i] - gt.values[3 * i];
        const double dy = pred.values[3 * i + 1] - gt.values[3 * i + 1];
        const double dz = pred.values[3 * i + 2] - gt.values[3 * i + 2];
        total += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return total / static_cast<double>(count);
}

inline double mse(const Tensor3& pred, const Tensor3& gt) {
    require_same_shape(pred, gt, "mse");
    if (pred.size() == 0) throw ShapeError("mse: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.values[i] - gt.values[i];
        total += d * d;
    }
    return total / static_cast<double>(pred.size());
}

inline double loss_value(LossKind kind, const Tensor3& pred, const Tensor3& gt) {
    return kind == LossKind::Mpjpe ? mpjpe(pred, gt) : mse(pred, gt);
}

namespace detail {
inline void require_same_parts(const PartTensors& a, const PartTensors& b, const SkeletonLayout& layout,
                               const char* what) {
    for (const auto& p : layout.parts()) {
        if (!a.contains(p.name) || !b.contains(p.name)) {
            throw ShapeError(std::string(what) + ": part '" + p.name + "' missing");
        }
    }
    if (a.size() != layout.part_count() || b.size() != layout.part_count()) {
        throw ShapeError(std::string(what) + ": part sets differ from the layout");
    }
}

inline PartTensors add_offsets(const PartTensors& local, const RootOffsets& r, const SkeletonLayout& layout) {
    if (r.values.joints != layout.part_count() || r.values.dims != 3) {
        throw ShapeError("offsets shape " + shape_string(r.values) + " does not match the layout");
    }
    PartTensors out = local;
    for (std::size_t p = 0; p < layout.part_count(); ++p) {
        Tensor3& t = out.at(layout.parts()[p].name);
        if (t.frames != r.values.frames) throw ShapeError("offsets and parts disagree on frame count");
        for (std::size_t n = 0; n < t.frames; ++n)
            for (std::size_t k = 0; k < t.joints; ++k)
                for (std::size_t d = 0; d < 3; ++d) t(n, k, d) += r.values(n, p, d);
    }
    return out;
}
}  // namespace detail

/// Loss on parts concatenated along the joint axis (local frames).
inline double part_loss(const PartTensors& pred, const PartTensors& gt, const SkeletonLayout& layout,
                        LossKind kind) {
    detail::require_same_parts(pred, gt, layout, "part_loss");
    return loss_value(kind, concat_parts(pred, layout), concat_parts(gt, layout));
}

/// Loss after lifting both sides back to the whole-body frame with their own offsets.
inline double wb_loss(const PartTensors& pred, const RootOffsets& pred_offsets, const PartTensors& gt,
                      const RootOffsets& gt_offsets, const SkeletonLayout& layout, LossKind kind) {
    detail::require_same_parts(pred, gt, layout, "wb_loss");
    return loss_value(kind, concat_parts(detail::add_offsets(pred, pred_offsets, layout), layout),
                      concat_parts(detail::add_offsets(gt, gt_offsets, layout), layout));
}

namespace detail {
inline void require_whole_body(const Tensor3& pred, const Tensor3& gt, const SkeletonLayout& layout,
                               const char* what) {
    require_same_shape(pred, gt, what);
    if (pred.dims != 3 || pred.joints != layout.total_joints()) {
        throw ShapeError(std::string(what) + ": expected N x " + std::to_string(layout.total_joints()) +
                         " x 3, got " + shape_string(pred));
    }
}
}  // namespace detail

/// Protocol #1: per frame, move pred's body root onto gt's, then MPJPE over all joints.
inline double metric_wb(const Tensor3& pred, const Tensor3& gt, const SkeletonLayout& layout) {
    detail::require_whole_body(pred, gt, layout, "metric_wb");
    const std::size_t root = layout.body().root;
    Tensor3 aligned = pred;
    for (std::size_t n = 0; n < pred.frames; ++n) {
        const double shift[3] = {gt(n, root, 0) - pred(n, root, 0), gt(n, root, 1) - pred(n, root, 1),
                                 gt(n, root, 2) - pred(n, root, 2)};
        for (std::size_t j = 0; j < pred.joints; ++j)
            for (std::size_t d = 0; d < 3; ++d) aligned(n, j, d) += shift[d];
    }
    return mpjpe(aligned, gt);
}

enum class MetricPart { Body, Face, Hands };

/// MPJPE over one part group with each part aligned to its own root joint.
/// Hands pools both hands, each aligned to its wrist.
inline double metric_part(const Tensor3& pred, const Tensor3& gt, const SkeletonLayout& layout, MetricPart which) {
    detail::require_whole_body(pred, gt, layout, "metric_part");
    std::vector<const PartSpec*> parts;
    switch (which) {
        case MetricPart::Body: parts = {&layout.part(kBody)}; break;
        case MetricPart::Face: parts = {&layout.part(kFace)}; break;
        case MetricPart::Hands: parts = {&layout.part(kLeftHand), &layout.part(kRightHand)}; break;
    }
    double total = 0.0;
    std::size_t count = 0;
    for (const PartSpec* p : parts) {
        for (std::size_t n = 0; n < pred.frames; ++n) {
            for (std::size_t j : p->joints) {
                double sq = 0.0;
                for (std::size_t d = 0; d < 3; ++d) {
                    const double e = (pred(n, j, d) - pred(n, p->root, d)) - (gt(n, j, d) - gt(n, p->root, d));
                    sq += e * e;
                }
                total += std::sqrt(sq);
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

inline double metric_pb(const Tensor3& pred, const Tensor3& gt, const SkeletonLayout& layout) {
    return (metric_part(pred, gt, layout, MetricPart::Body) + metric_part(pred, gt, layout, MetricPart::Face) +
            metric_part(pred, gt, layout, MetricPart::Hands)) /
           3.0;
}

inline Tensor3 aggregate_hypotheses(const HypothesisSet& hyps) {
    if (hyps.poses.empty()) throw ShapeError("aggregate_hypotheses: empty hypothesis set");
    Tensor3 mean = hyps.poses.front();
    for (std::size_t h = 1; h < hyps.size(); ++h) {
        require_same_shape(mean, hyps.poses[h], "aggregate_hypotheses");
        for (std::size_t i = 0; i < mean.size(); ++i) mean.values[i] += hyps.poses[h].values[i];
    }
    const double inv = 1.0 / static_cast<double>(hyps.size());
    for (double& v : mean.values) v *= inv;
    return mean;
}

struct Selection {
    std::size_t index = 0;
    double value = 0.0;
};

/// Hypothesis minimising `metric` against gt; ties go to the lowest index.
inline Selection select_best(const HypothesisSet& hyps, const Tensor3& gt,
                             const std::function<double(const Tensor3&, const Tensor3&)>& metric) {
    if (hyps.poses.empty()) throw ShapeError("select_best: empty hypothesis set");
    Selection best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t h = 0; h < hyps.size(); ++h) {
        const double v = metric(hyps.poses[h], gt);
        if (v < best.value) best = {h, v};
    }
    return best;
}

/// WB / PB / Body / Face / Hands in millimetres.
struct MetricRow {
    double wb = 0.0;
    double pb = 0.0;
    double body = 0.0;
    double face = 0.0;
    double hands = 0.0;

    bool operator==(const MetricRow&) const = default;
};

inline MetricRow evaluate_row(const Tensor3& pred, const Tensor3& gt, const SkeletonLayout& layout) {
    MetricRow r;
    r.wb = metric_wb(pred, gt, layout);
    r.body = metric_part(pred, gt, layout, MetricPart::Body);
    r.face = metric_part(pred, gt, layout, MetricPart::Face);
    r.hands = metric_part(pred, gt, layout, MetricPart::Hands);
    r.pb = (r.body + r.face + r.hands) / 3.0;
    return r;
}

/// Per-column minimum over hypotheses; PB is the mean of the selected part columns.
inline MetricRow best_row(const HypothesisSet& hyps, const Tensor3& gt, const SkeletonLayout& layout) {
    auto col = [&](auto fn) {
        return select_best(hyps, gt, [&](const Tensor3& p, const Tensor3& g) { return fn(p, g); }).value;
    };
    MetricRow r;
    r.wb = col([&](const Tensor3& p, const Tensor3& g) { return metric_wb(p, g, layout); });
    r.body = col([&](const Tensor3& p, const Tensor3& g) { return metric_part(p, g, layout, MetricPart::Body); });
    r.face = col([&](const Tensor3& p, const Tensor3& g) { return metric_part(p, g, layout, MetricPart::Face); });
    r.hands = col([&](const Tensor3& p, const Tensor3& g) { return metric_part(p, g, layout, MetricPart::Hands); });
    r.pb = (r.body + r.face + r.hands) / 3.0;
    return r;
}

struct MetricsReport {
    std::size_t frames = 0;       // N
    int hypotheses = 0;           // H
    int iterations = 0;           // K
    std::size_t windows = 0;
    MetricRow p_best;
    MetricRow p_agg;

    bool operator==(const MetricsReport&) const = default;
};

/// Mean of rows over windows, with PB recomputed from the averaged part columns.
inline MetricRow mean_rows(const std::vector<MetricRow>& rows) {
    MetricRow m;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.wb += r.wb;
        m.body += r.body;
        m.face += r.face;
        m.hands += r.hands;
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    m.wb *= inv;
    m.body *= inv;
    m.face *= inv;
    m.hands *= inv;
    m.pb = (m.body + m.face + m.hands) / 3.0;
    return m;
}

namespace detail {
inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline nlohmann::ordered_json row_to_json(const MetricRow& r) {
    return {{"wb", round3(r.wb)}, {"pb", round3(r.pb)}, {"body", round3(r.body)},
            {"face", round3(r.face)}, {"hands", round3(r.hands)}};
}

inline MetricRow row_from_json(const nlohmann::json& j) {
    return {j.at("wb").get<double>(), j.at("pb").get<double>(), j.at("body").get<double>(),
            j.at("face").get<double>(), j.at("hands").get<double>()};
}
}  // namespace detail

/// Values are written in millimetres rounded to 3 decimals.
inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
    return {{"settings", {{"N", r.frames}, {"H", r.hypotheses}, {"K", r.iterations}, {"windows", r.windows}}},
            {"p_best", detail::row_to_json(r.p_best)},
            {"p_agg", detail::row_to_json(r.p_agg)}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    try {
        const auto& s = j.at("settings");
        MetricsReport r;
        r.frames = s.at("N").get<std::size_t>();
        r.hypotheses = s.at("H").get<int>();
        r.iterations = s.at("K").get<int>();
        r.windows = s.at("windows").get<std::size_t>();
        r.p_best = detail::row_from_json(j.at("p_best"));
        r.p_agg = detail::row_from_json(j.at("p_agg"));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics report: ") + e.what());
    }
}

}  // namespace pafuse
