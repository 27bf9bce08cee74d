#pragma once

// A bank of part denoisers plus the routing that says which network sees which parts.
// The default bank has body, face and one hand network shared by both hands; the
// ablation variants drop the part-frame shift and/or merge everything into one network.

#include <map>
#include <string>
#include <vector>

#include "pafuse/denoiser.hpp"
#include "pafuse/skeleton.hpp"

namespace pafuse {

struct ModelVariant {
    bool part_frames = true;     // each part in its own root frame, else all parts rooted at keypoint 0
    bool part_denoisers = true;  // one network per part group, else a single whole-body network
    bool balanced_loss = false;  // weight parts equally in the loss instead of by joint count

    std::string name() const {
        if (part_frames && part_denoisers) return "full";
        if (part_frames) return "shift_only";
        if (part_denoisers) return "parts_only";
        return "monolithic";
    }

    static ModelVariant parse(const std::string& name) {
        if (name == "full") return {true, true, false};
        if (name == "shift_only") return {true, false, true};
        if (name == "parts_only") return {false, true, false};
        if (name == "monolithic") return {false, false, false};
        throw ConfigError("unknown model variant '" + name +
                          "' (expected full, shift_only, parts_only or monolithic)");
    }

    bool operator==(const ModelVariant&) const = default;
};

inline constexpr const char* kHandsNetwork = "hands";
inline constexpr const char* kWholeNetwork = "whole";

struct Route {
    std::string network;
    std::vector<std::string> parts;  // concatenated along the joint axis
};

/// Network name -> parts routed through it, in layout order. Both hands share one network.
inline std::vector<Route> make_routes(const SkeletonLayout& layout, const ModelVariant& variant) {
    std::vector<Route> routes;
    if (!variant.part_denoisers) {
        Route whole{kWholeNetwork, {}};
        for (const auto& p : layout.parts()) whole.parts.push_back(p.name);
        routes.push_back(std::move(whole));
        return routes;
    }
    const bool shared_hands = layout.has_part(kLeftHand) && layout.has_part(kRightHand) &&
                              layout.part(kLeftHand).joints.size() == layout.part(kRightHand).joints.size();
    for (const auto& p : layout.parts()) {
        const bool hand = p.name == kLeftHand || p.name == kRightHand;
        routes.push_back({shared_hands && hand ? std::string(kHandsNetwork) : p.name, {p.name}});
    }
    return routes;
}

/// Distinct network names in first-use order with their joint counts.
inline std::vector<std::pair<std::string, std::size_t>> network_joints(const SkeletonLayout& layout,
                                                                       const std::vector<Route>& routes) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& r : routes) {
        std::size_t joints = 0;
        for (const auto& p : r.parts) joints += layout.part(p).joints.size();
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == r.network; });
        if (it == out.end()) {
            out.emplace_back(r.network, joints);
        } else if (it->second != joints) {
            throw ConfigError("network '" + r.network + "' is shared by routes of different sizes");
        }
    }
    return out;
}

/// Desk-scale widths keeping the 384:256:224 body:hands:face proportion.
inline std::map<std::string, std::size_t> default_widths() {
    return {{kBody, 48}, {kHandsNetwork, 32}, {kFace, 28}, {kWholeNetwork, 64}};
}

inline std::map<std::string, double> default_width_ratios() {
    return {{kBody, 384.0}, {kHandsNetwork, 256.0}, {kFace, 224.0}};
}

class DenoiserBank {
public:
    DenoiserBank() = default;

    DenoiserBank(SkeletonLayout layout, ModelVariant variant, std::vector<Denoiser> networks)
        : layout_(std::move(layout)),
          variant_(variant),
          frame_layout_(variant.part_frames ? layout_ : layout_.with_roots_at_body()),
          routes_(make_routes(layout_, variant_)),
          networks_(std::move(networks)) {
        const auto expected = network_joints(layout_, routes_);
        if (expected.size() != networks_.size()) {
            throw ConfigError("model has " + std::to_string(networks_.size()) + " networks, variant '" +
                              variant_.name() + "' needs " + std::to_string(expected.size()));
        }
        const std::size_t frames = networks_.front().config().frames;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& c = networks_[i].config();
            if (c.part != expected[i].first || c.joints != expected[i].second || c.frames != frames) {
                throw ConfigError("network '" + c.part + "' does not match the layout/variant");
            }
        }
    }

    const SkeletonLayout& layout() const noexcept { return layout_; }
    /// Layout whose roots define the local frames the networks work in.
    const SkeletonLayout& frame_layout() const noexcept { return frame_layout_; }
    const ModelVariant& variant() const noexcept { return variant_; }
    const std::vector<Route>& routes() const noexcept { return routes_; }
    const std::vector<Denoiser>& networks() const noexcept { return networks_; }
    std::vector<Denoiser>& networks() noexcept { return networks_; }
    std::size_t frames() const noexcept { return networks_.front().config().frames; }

    const Denoiser& network(const std::string& name) const { return networks_[network_index(name)]; }

    std::size_t network_index(const std::string& name) const {
        for (std::size_t i = 0; i < networks_.size(); ++i) {
            if (networks_[i].config().part == name) return i;
        }
        throw ConfigError("model has no network '" + name + "'");
    }

    std::size_t parameter_count() const {
        std::size_t total = 0;
        for (const auto& n : networks_) total += count_parameters(n);
        return total;
    }

    /// Clean estimate for every part; inputs and outputs keyed by part name.
    PartTensors predict(int t, const PartTensors& x2d, const PartTensors& y_t) const {
        PartTensors out;
        for (const auto& route : routes_) {
            const Denoiser& net = network(route.network);
            const Tensor3 x = gather(route, x2d, 2);
            const Tensor3 y = gather(route, y_t, 3);
            const Tensor3 pred = net.predict(t, x, y);
            scatter(route, pred, out);
        }
        return out;
    }

    /// Network parameters registered on a tape, one Bound per network.
    std::vector<Denoiser::Bound> bind(ad::Tape& tape) const {
        std::vector<Denoiser::Bound> out;
        for (const auto& n : networks_) out.push_back(n.bind(tape));
        return out;
    }

    /// Differentiable prediction: part name -> (N * J_part) x 3 node.
    std::map<std::string, ad::Var> forward(ad::Tape& tape, const std::vector<Denoiser::Bound>& bound, int t,
                                           const PartTensors& x2d, const PartTensors& y_t) const {
        std::map<std::string, ad::Var> out;
        for (const auto& route : routes_) {
            const std::size_t idx = network_index(route.network);
            const Denoiser& net = networks_[idx];
            const ad::Matrix input = net.pack_input(gather(route, x2d, 2), gather(route, y_t, 3));
            const ad::Var pred = net.forward(tape, bound[idx], t, input);
            if (route.parts.size() == 1) {
                out.emplace(route.parts.front(), pred);
                continue;
            }
            const std::size_t total = net.config().joints;
            std::size_t offset = 0;
            for (const auto& name : route.parts) {
                const std::size_t J = layout_.part(name).joints.size();
                std::vector<std::size_t> rows;
                rows.reserve(frames() * J);
                for (std::size_t n = 0; n < frames(); ++n)
                    for (std::size_t k = 0; k < J; ++k) rows.push_back(n * total + offset + k);
                out.emplace(name, tape.gather_rows(pred, std::move(rows)));
                offset += J;
            }
        }
        return out;
    }

private:
    Tensor3 gather(const Route& route, const PartTensors& parts, std::size_t dims) const {
        std::size_t joints = 0;
        for (const auto& name : route.parts) joints += layout_.part(name).joints.size();
        Tensor3 out(frames(), joints, dims);
        std::size_t offset = 0;
        for (const auto& name : route.parts) {
            auto it = parts.find(name);
            if (it == parts.end()) throw ShapeError("model input is missing part '" + name + "'");
            const Tensor3& t = it->second;
            const std::size_t J = layout_.part(name).joints.size();
            if (t.frames != frames() || t.joints != J || t.dims != dims) {
                throw ShapeError("model input for part '" + name + "' has shape " + shape_string(t));
            }
            for (std::size_t n = 0; n < frames(); ++n)
                for (std::size_t k = 0; k < J; ++k)
                    for (std::size_t d = 0; d < dims; ++d) out(n, offset + k, d) = t(n, k, d);
            offset += J;
        }
        return out;
    }

    void scatter(const Route& route, const Tensor3& pred, PartTensors& out) const {
        std::size_t offset = 0;
        for (const auto& name : route.parts) {
            const std::size_t J = layout_.part(name).joints.size();
            Tensor3 t(frames(), J, 3);
            for (std::size_t n = 0; n < frames(); ++n)
                for (std::size_t k = 0; k < J; ++k)
                    for (std::size_t d = 0; d < 3; ++d) t(n, k, d) = pred(n, offset + k, d);
            out[name] = std::move(t);
            offset += J;
        }
    }

    SkeletonLayout layout_;
    ModelVariant variant_;
    SkeletonLayout frame_layout_;
    std::vector<Route> routes_;
    std::vector<Denoiser> networks_;
};

struct ModelSpec {
    ModelVariant variant;
    std::size_t frames = 9;
    std::size_t depth = 2;
    std::map<std::string, std::size_t> widths = default_widths();
};

/// Fresh bank; network i is seeded with derive_seed(seed, i).
inline DenoiserBank build_bank(const SkeletonLayout& layout, const ModelSpec& spec, std::uint64_t seed) {
    const auto routes = make_routes(layout, spec.variant);
    std::vector<Denoiser> networks;
    std::uint64_t i = 0;
    for (const auto& [name, joints] : network_joints(layout, routes)) {
        auto it = spec.widths.find(name);
        if (it == spec.widths.end()) throw ConfigError("no channel width given for network '" + name + "'");
        networks.push_back(build_denoiser({name, joints, spec.frames, it->second, spec.depth}, derive_seed(seed, i++)));
    }
    return DenoiserBank(layout, spec.variant, std::move(networks));
}

/// Widths for `variant` matching `target_total` parameters. Part-denoiser variants keep
/// the body:hands:face ratios (or equal widths when `uniform`); the monolithic variants
/// size their single network.
inline std::map<std::string, std::size_t> matched_widths(const SkeletonLayout& layout, const ModelVariant& variant,
                                                         std::size_t frames, std::size_t depth,
                                                         std::size_t target_total, bool uniform = false) {
    const auto routes = make_routes(layout, variant);
    const auto nets = network_joints(layout, routes);
    std::vector<NetworkShape> shapes;
    std::vector<double> ratios;
    const auto defaults = default_width_ratios();
    for (const auto& [name, joints] : nets) {
        shapes.push_back({joints, frames});
        auto it = defaults.find(name);
        ratios.push_back(uniform || it == defaults.end() ? 1.0 : it->second);
    }
    const auto widths = allocate_channels(target_total, shapes, depth, ratios);
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < nets.size(); ++i) out[nets[i].first] = widths[i];
    return out;
}

}  // namespace pafuse
