#pragma once

// Whole-body skeleton layout and the conversions between the whole-body frame
// (body root at keypoint 0) and the per-part local frames.

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pafuse/common.hpp"

namespace pafuse {

inline constexpr const char* kBody = "body";
inline constexpr const char* kFace = "face";
inline constexpr const char* kLeftHand = "left_hand";
inline constexpr const char* kRightHand = "right_hand";

struct PartSpec {
    std::string name;
    std::vector<std::size_t> joints;  // sorted global indices
    std::size_t root = 0;             // global index

    bool operator==(const PartSpec&) const = default;

    /// Position of global joint `global` inside this part, or npos.
    std::size_t local_index(std::size_t global) const {
        auto it = std::lower_bound(joints.begin(), joints.end(), global);
        if (it == joints.end() || *it != global) return npos;
        return static_cast<std::size_t>(it - joints.begin());
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

class SkeletonLayout {
public:
    SkeletonLayout() = default;

    /// Validates the partition and root invariants; throws ConfigError.
    SkeletonLayout(std::size_t total_joints, std::vector<PartSpec> parts)
        : total_joints_(total_joints), parts_(std::move(parts)) {
        validate();
    }

    std::size_t total_joints() const noexcept { return total_joints_; }
    const std::vector<PartSpec>& parts() const noexcept { return parts_; }
    std::size_t part_count() const noexcept { return parts_.size(); }

    const PartSpec& part(const std::string& name) const {
        return parts_[part_position(name)];
    }
    bool has_part(const std::string& name) const {
        return std::any_of(parts_.begin(), parts_.end(),
                           [&](const PartSpec& p) { return p.name == name; });
    }
    std::size_t part_position(const std::string& name) const {
        for (std::size_t i = 0; i < parts_.size(); ++i) {
            if (parts_[i].name == name) return i;
        }
        throw ConfigError("layout has no part named '" + name + "'");
    }

    /// The part anchoring the hierarchy: "body" when present, else the first part.
    const PartSpec& body() const {
        return has_part(kBody) ? part(kBody) : parts_.front();
    }

    /// Same membership with every root moved to the body root (no part-frame shift).
    SkeletonLayout with_roots_at_body() const {
        std::vector<PartSpec> parts = parts_;
        for (auto& p : parts) p.root = body().root;
        return SkeletonLayout(total_joints_, std::move(parts));
    }

    bool operator==(const SkeletonLayout&) const = default;

private:
    void validate() const {
        if (parts_.empty()) throw ConfigError("layout has no parts");
        std::vector<int> owner(total_joints_, -1);
        std::set<std::string> names;
        for (std::size_t i = 0; i < parts_.size(); ++i) {
            const auto& p = parts_[i];
            if (!names.insert(p.name).second) {
                throw ConfigError("layout: duplicate part '" + p.name + "'");
            }
            if (p.joints.empty()) throw ConfigError("layout: part '" + p.name + "' is empty");
            if (!std::is_sorted(p.joints.begin(), p.joints.end())) {
                throw ConfigError("layout: joints of part '" + p.name + "' are not sorted");
            }
            for (std::size_t j : p.joints) {
                if (j >= total_joints_) {
                    throw ConfigError("layout: joint " + std::to_string(j) + " of part '" + p.name +
                                      "' is out of range");
                }
                if (owner[j] != -1) {
                    throw ConfigError("layout: joint " + std::to_string(j) +
                                      " belongs to more than one part");
                }
                owner[j] = static_cast<int>(i);
            }
        }
        for (std::size_t j = 0; j < total_joints_; ++j) {
            if (owner[j] == -1) {
                throw ConfigError("layout: joint " + std::to_string(j) + " belongs to no part");
            }
        }
        const PartSpec& b = body();
        for (const auto& p : parts_) {
            if (b.local_index(p.root) == PartSpec::npos) {
                throw ConfigError("layout: root " + std::to_string(p.root) + " of part '" + p.name +
                                  "' is not a body joint");
            }
        }
    }

    std::size_t total_joints_ = 0;
    std::vector<PartSpec> parts_;
};

namespace detail {
inline std::vector<std::size_t> iota_range(std::size_t first, std::size_t count) {
    std::vector<std::size_t> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = first + i;
    return v;
}
}  // namespace detail

/// 133 keypoints in contiguous blocks: body 0-22 (17 main + 6 feet), face 23-90,
/// left hand 91-111, right hand 112-132. Roots: hip centre 0, nose 1, wrists 10/11.
inline SkeletonLayout default_layout() {
    return SkeletonLayout(133, {
                                   {kBody, detail::iota_range(0, 23), 0},
                                   {kFace, detail::iota_range(23, 68), 1},
                                   {kLeftHand, detail::iota_range(91, 21), 10},
                                   {kRightHand, detail::iota_range(112, 21), 11},
                               });
}

inline nlohmann::json layout_to_json(const SkeletonLayout& layout) {
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : layout.parts()) {
        parts.push_back({{"name", p.name}, {"joints", p.joints}, {"root", p.root}});
    }
    return {{"total_joints", layout.total_joints()}, {"parts", parts}};
}

inline SkeletonLayout layout_from_json(const nlohmann::json& j) {
    try {
        std::vector<PartSpec> parts;
        for (const auto& p : j.at("parts")) {
            parts.push_back({p.at("name").get<std::string>(),
                             p.at("joints").get<std::vector<std::size_t>>(),
                             p.at("root").get<std::size_t>()});
        }
        return SkeletonLayout(j.at("total_joints").get<std::size_t>(), std::move(parts));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("layout: ") + e.what());
    }
}

inline SkeletonLayout load_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open layout file " + path);
    try {
        return layout_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("layout file " + path + ": " + e.what());
    }
}

/// Stable identifier of a layout: FNV-1a of its canonical JSON dump.
inline std::string layout_hash(const SkeletonLayout& layout) {
    return hex64(fnv1a64(layout_to_json(layout).dump()));
}

struct PoseSequence {
    std::vector<std::int64_t> frame_ids;
    Tensor3 coords;  // N x J x D

    std::size_t frames() const noexcept { return coords.frames; }
    bool operator==(const PoseSequence&) const = default;
};

/// Checks frame_ids length and monotonicity plus finiteness.
inline void validate_sequence(const PoseSequence& seq) {
    if (seq.frame_ids.size() != seq.coords.frames) {
        throw DataError("sequence has " + std::to_string(seq.frame_ids.size()) + " frame ids for " +
                        std::to_string(seq.coords.frames) + " frames");
    }
    for (std::size_t i = 1; i < seq.frame_ids.size(); ++i) {
        if (seq.frame_ids[i] <= seq.frame_ids[i - 1]) {
            throw DataError("frame ids not strictly increasing at position " + std::to_string(i));
        }
    }
    if (!all_finite(seq.coords)) throw DataError("sequence contains non-finite coordinates");
}

/// Per frame, per part (layout order) root position relative to the body root. N x P x 3.
struct RootOffsets {
    Tensor3 values;

    bool operator==(const RootOffsets&) const = default;
};

/// Gathers a part's joints (layout order) from an N x J x D array.
inline Tensor3 extract_part(const Tensor3& coords, const PartSpec& part) {
    Tensor3 out(coords.frames, part.joints.size(), coords.dims);
    for (std::size_t n = 0; n < coords.frames; ++n) {
        for (std::size_t k = 0; k < part.joints.size(); ++k) {
            for (std::size_t d = 0; d < coords.dims; ++d) {
                out(n, k, d) = coords(n, part.joints[k], d);
            }
        }
    }
    return out;
}

inline PartTensors split_part_tensors(const Tensor3& coords, const SkeletonLayout& layout) {
    if (coords.joints != layout.total_joints()) {
        throw ShapeError("split_parts: sequence has " + std::to_string(coords.joints) +
                         " joints, layout expects " + std::to_string(layout.total_joints()));
    }
    PartTensors out;
    for (const auto& p : layout.parts()) out.emplace(p.name, extract_part(coords, p));
    return out;
}

inline std::map<std::string, PoseSequence> split_parts(const PoseSequence& seq,
                                                       const SkeletonLayout& layout) {
    std::map<std::string, PoseSequence> out;
    for (auto& [name, t] : split_part_tensors(seq.coords, layout)) {
        out.emplace(name, PoseSequence{seq.frame_ids, std::move(t)});
    }
    return out;
}

namespace detail {
inline void require_3d(const Tensor3& t, const char* what) {
    if (t.dims != 3) {
        throw ShapeError(std::string(what) + ": expected 3D coordinates, got D=" +
                         std::to_string(t.dims));
    }
}
}  // namespace detail

inline RootOffsets compute_root_offsets(const Tensor3& coords, const SkeletonLayout& layout) {
    detail::require_3d(coords, "compute_root_offsets");
    if (coords.joints != layout.total_joints()) {
        throw ShapeError("compute_root_offsets: joint count mismatch");
    }
    const std::size_t body_root = layout.body().root;
    RootOffsets r{Tensor3(coords.frames, layout.part_count(), 3)};
    for (std::size_t n = 0; n < coords.frames; ++n) {
        for (std::size_t p = 0; p < layout.part_count(); ++p) {
            for (std::size_t d = 0; d < 3; ++d) {
                r.values(n, p, d) = coords(n, layout.parts()[p].root, d) - coords(n, body_root, d);
            }
        }
    }
    return r;
}

inline RootOffsets compute_root_offsets(const PoseSequence& seq, const SkeletonLayout& layout) {
    return compute_root_offsets(seq.coords, layout);
}

struct PartFrames {
    PartTensors local;
    RootOffsets offsets;
};

/// Re-expresses every part relative to its own root joint.
inline PartFrames shift_to_part_frames(const Tensor3& coords, const SkeletonLayout& layout) {
    detail::require_3d(coords, "shift_to_part_frames");
    PartFrames out{split_part_tensors(coords, layout), compute_root_offsets(coords, layout)};
    for (const auto& p : layout.parts()) {
        Tensor3& local = out.local.at(p.name);
        for (std::size_t n = 0; n < coords.frames; ++n) {
            const double root[3] = {coords(n, p.root, 0), coords(n, p.root, 1), coords(n, p.root, 2)};
            for (std::size_t k = 0; k < p.joints.size(); ++k) {
                for (std::size_t d = 0; d < 3; ++d) local(n, k, d) -= root[d];
            }
        }
    }
    return out;
}

/// Offsets read off a predicted body part expressed in its local (root at origin) frame.
inline RootOffsets derive_root_offsets_from_body(const Tensor3& body_local,
                                                 const SkeletonLayout& layout) {
    detail::require_3d(body_local, "derive_root_offsets_from_body");
    const PartSpec& body = layout.body();
    if (body_local.joints != body.joints.size()) {
        throw ShapeError("derive_root_offsets_from_body: body part has " +
                         std::to_string(body_local.joints) + " joints, layout expects " +
                         std::to_string(body.joints.size()));
    }
    RootOffsets r{Tensor3(body_local.frames, layout.part_count(), 3)};
    for (std::size_t p = 0; p < layout.part_count(); ++p) {
        const PartSpec& part = layout.parts()[p];
        if (&part == &body) continue;
        const std::size_t k = body.local_index(part.root);
        if (k == PartSpec::npos) {
            throw ConfigError("root of part '" + part.name + "' is not in the body part");
        }
        for (std::size_t n = 0; n < body_local.frames; ++n) {
            for (std::size_t d = 0; d < 3; ++d) r.values(n, p, d) = body_local(n, k, d);
        }
    }
    return r;
}

/// Global coordinates = local part coordinates + the part's offset.
inline Tensor3 reconstruct_whole_body(const PartTensors& local_parts, const RootOffsets& offsets,
                                      const SkeletonLayout& layout) {
    const Tensor3& r = offsets.values;
    if (r.joints != layout.part_count() || r.dims != 3) {
        throw ShapeError("reconstruct_whole_body: offsets shape " + shape_string(r));
    }
    Tensor3 out(r.frames, layout.total_joints(), 3);
    for (std::size_t p = 0; p < layout.part_count(); ++p) {
        const PartSpec& part = layout.parts()[p];
        auto it = local_parts.find(part.name);
        if (it == local_parts.end()) {
            throw ShapeError("reconstruct_whole_body: missing part '" + part.name + "'");
        }
        const Tensor3& local = it->second;
        if (local.frames != r.frames) {
            throw ShapeError("reconstruct_whole_body: part '" + part.name + "' has " +
                             std::to_string(local.frames) + " frames, offsets have " +
                             std::to_string(r.frames));
        }
        if (local.joints != part.joints.size() || local.dims != 3) {
            throw ShapeError("reconstruct_whole_body: part '" + part.name + "' has shape " +
                             shape_string(local));
        }
        for (std::size_t n = 0; n < r.frames; ++n) {
            for (std::size_t k = 0; k < part.joints.size(); ++k) {
                for (std::size_t d = 0; d < 3; ++d) {
                    out(n, part.joints[k], d) = local(n, k, d) + r(n, p, d);
                }
            }
        }
    }
    return out;
}

/// Concatenates parts along the joint axis in layout order.
inline Tensor3 concat_parts(const PartTensors& parts, const SkeletonLayout& layout) {
    std::size_t frames = 0, dims = 0, joints = 0;
    for (const auto& p : layout.parts()) {
        auto it = parts.find(p.name);
        if (it == parts.end()) throw ShapeError("concat_parts: missing part '" + p.name + "'");
        if (joints == 0) {
            frames = it->second.frames;
            dims = it->second.dims;
        } else if (it->second.frames != frames || it->second.dims != dims) {
            throw ShapeError("concat_parts: part '" + p.name + "' has shape " +
                             shape_string(it->second));
        }
        joints += it->second.joints;
    }
    if (parts.size() != layout.part_count()) throw ShapeError("concat_parts: unexpected parts");
    Tensor3 out(frames, joints, dims);
    for (std::size_t n = 0; n < frames; ++n) {
        std::size_t offset = 0;
        for (const auto& p : layout.parts()) {
            const Tensor3& t = parts.at(p.name);
            for (std::size_t k = 0; k < t.joints; ++k) {
                for (std::size_t d = 0; d < dims; ++d) out(n, offset + k, d) = t(n, k, d);
            }
            offset += t.joints;
        }
    }
    return out;
}

}  // namespace pafuse
