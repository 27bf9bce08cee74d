#pragma once

// INI-style run configuration:
//
//   [data]      train, layout
//   [train]     learning_rate, beta1, beta2, weight_decay, epochs, batch, frames,
//               window_stride, loss (mpjpe|mse), loss_frame (part|wb), scale, lr_decay,
//               seed, checkpoint_interval, threads
//   [diffusion] steps, offset
//   [model]     variant, depth, width_body, width_hands, width_face, width_whole
//   [eval]      hypotheses, iterations
//
// Missing keys keep their defaults; unknown sections or keys are rejected.

#include <fstream>
#include <set>

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pafuse/training.hpp"

namespace pafuse {

struct RunConfig {
    TrainConfig train;
    std::string data_path;
    std::string layout_path;
    int hypotheses = 20;
    int iterations = 10;
};

namespace detail {

template <class T>
void read_key(const boost::property_tree::ptree& section, const std::string& name, const char* key, T& out) {
    if (auto v = section.get_optional<std::string>(key)) {
        try {
            out = boost::lexical_cast<T>(*v);
        } catch (const boost::bad_lexical_cast&) {
            throw ConfigError("config [" + name + "] " + key + ": cannot parse '" + *v + "'");
        }
    }
}

inline void check_keys(const boost::property_tree::ptree& section, const std::string& name,
                       const std::set<std::string>& allowed) {
    for (const auto& [key, _] : section) {
        if (!allowed.contains(key)) throw ConfigError("config [" + name + "]: unknown key '" + key + "'");
    }
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "config") {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    RunConfig rc;
    TrainConfig& c = rc.train;
    for (const auto& [name, section] : tree) {
        using detail::read_key;
        if (name == "data") {
            detail::check_keys(section, name, {"train", "layout"});
            read_key(section, name, "train", rc.data_path);
            read_key(section, name, "layout", rc.layout_path);
        } else if (name == "train") {
            detail::check_keys(section, name,
                               {"learning_rate", "beta1", "beta2", "weight_decay", "epochs", "batch", "frames",
                                "window_stride", "loss", "loss_frame", "scale", "lr_decay", "seed",
                                "checkpoint_interval", "threads"});
            read_key(section, name, "learning_rate", c.learning_rate);
            read_key(section, name, "beta1", c.beta1);
            read_key(section, name, "beta2", c.beta2);
            read_key(section, name, "weight_decay", c.weight_decay);
            read_key(section, name, "epochs", c.epochs);
            read_key(section, name, "batch", c.batch);
            read_key(section, name, "frames", c.frames);
            read_key(section, name, "window_stride", c.window_stride);
            std::string loss = to_string(c.loss), frame = to_string(c.loss_frame);
            read_key(section, name, "loss", loss);
            read_key(section, name, "loss_frame", frame);
            c.loss = parse_loss_kind(loss);
            c.loss_frame = parse_loss_frame(frame);
            read_key(section, name, "scale", c.scale);
            read_key(section, name, "lr_decay", c.lr_decay);
            read_key(section, name, "seed", c.seed);
            read_key(section, name, "checkpoint_interval", c.checkpoint_interval);
            read_key(section, name, "threads", c.threads);
        } else if (name == "diffusion") {
            detail::check_keys(section, name, {"steps", "offset"});
            read_key(section, name, "steps", c.diffusion_steps);
            read_key(section, name, "offset", c.schedule_offset);
        } else if (name == "model") {
            detail::check_keys(section, name,
                               {"variant", "depth", "width_body", "width_hands", "width_face", "width_whole"});
            read_key(section, name, "variant", c.variant);
            read_key(section, name, "depth", c.depth);
            read_key(section, name, "width_body", c.widths[kBody]);
            read_key(section, name, "width_hands", c.widths[kHandsNetwork]);
            read_key(section, name, "width_face", c.widths[kFace]);
            read_key(section, name, "width_whole", c.widths[kWholeNetwork]);
        } else if (name == "eval") {
            detail::check_keys(section, name, {"hypotheses", "iterations"});
            read_key(section, name, "hypotheses", rc.hypotheses);
            read_key(section, name, "iterations", rc.iterations);
        } else {
            throw ConfigError(origin + ": unknown section [" + name + "]");
        }
    }
    c.validate();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, path);
}

}  // namespace pafuse
