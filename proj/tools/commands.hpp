#pragma once

// Subcommands of the `pafuse` command-line tool. run_cli() is the whole program minus
// process plumbing so tests can drive it in-process.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "pafuse/config_file.hpp"
#include "pafuse/training.hpp"

namespace pafuse::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommandResult {
    int code = kOk;
    std::string message;
    std::vector<std::string> outputs;
};

inline void configure_logging() {
    const char* level = std::getenv("PAFUSE_LOG");
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << text;
    if (!out) throw DataError("failed writing " + path);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string fmt3(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(3) << v;
    return ss.str();
}

inline std::string metrics_table(const MetricsReport& r) {
    std::ostringstream ss;
    ss << std::left << std::setw(8) << "" << std::right;
    for (const char* h : {"WB", "PB", "Body", "Face", "Hands"}) ss << std::setw(10) << h;
    ss << "\n";
    auto row = [&](const char* name, const MetricRow& m) {
        ss << std::left << std::setw(8) << name << std::right;
        for (double v : {m.wb, m.pb, m.body, m.face, m.hands}) ss << std::setw(10) << fmt3(v);
        ss << "\n";
    };
    row("P-Best", r.p_best);
    row("P-Agg", r.p_agg);
    ss << "N=" << r.frames << " H=" << r.hypotheses << " K=" << r.iterations << " windows=" << r.windows << "\n";
    return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SynthConfig config;
};

inline CommandResult cmd_synth(const SynthArgs& a, std::ostream& os) {
    const DatasetFile ds = synth_generate(a.config);
    save_dataset(ds, a.out);
    os << "wrote " << a.out << ": " << ds.sequences.size() << " sequences x " << a.config.frames << " frames, "
       << ds.layout.total_joints() << " joints\n";
    return {kOk, "", {a.out}};
}

inline nlohmann::ordered_json histogram_json(const GapHistogram& h) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [gap, count] : h) j[std::to_string(gap)] = count;
    return j;
}

inline nlohmann::ordered_json stats_json(const DatasetFile& ds) {
    nlohmann::ordered_json seqs = nlohmann::ordered_json::array();
    GapHistogram pooled;
    for (const auto& s : ds.sequences) {
        const auto h = gap_histogram(s.frame_ids);
        for (const auto& [gap, count] : h) pooled[gap] += count;
        seqs.push_back({{"id", s.id}, {"frames", s.frames()}, {"gaps", histogram_json(h)}});
    }
    return {{"sequences", seqs}, {"pooled", histogram_json(pooled)}};
}

inline CommandResult cmd_stats(const std::string& data, const std::string& out, std::ostream& os) {
    const DatasetFile ds = load_dataset(data);
    const auto j = stats_json(ds);
    const std::string text = j.dump(2) + "\n";
    os << text;
    os << std::left << std::setw(16) << "sequence" << std::right << std::setw(8) << "gap" << std::setw(8) << "count"
       << "\n";
    auto table = [&](const std::string& name, const nlohmann::ordered_json& h) {
        if (h.empty()) {
            os << std::left << std::setw(16) << name << std::right << std::setw(16) << "(no gaps)" << "\n";
            return;
        }
        for (const auto& [gap, count] : h.items()) {
            os << std::left << std::setw(16) << name << std::right << std::setw(8) << gap << std::setw(8)
               << count.get<std::size_t>() << "\n";
        }
    };
    for (const auto& s : j["sequences"]) table(s["id"].get<std::string>(), s["gaps"]);
    table("(pooled)", j["pooled"]);
    CommandResult r;
    if (!out.empty()) {
        detail::write_text(out, text);
        r.outputs.push_back(out);
    }
    return r;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string log;  // JSON lines; defaults to <out>.log.jsonl
    std::string layout;
    TrainConfig config;
};

inline SkeletonLayout resolve_layout(const std::string& layout_path, const DatasetFile& ds) {
    if (layout_path.empty()) return ds.layout;
    const SkeletonLayout layout = load_layout(layout_path);
    if (layout_hash(layout) != layout_hash(ds.layout)) {
        throw DataError("layout " + layout_path + " does not match the dataset layout");
    }
    return layout;
}

inline CommandResult cmd_train(const TrainArgs& a, std::ostream& os) {
    a.config.validate();
    const DatasetFile ds = load_dataset(a.data);
    const SkeletonLayout layout = resolve_layout(a.layout, ds);
    DenoiserBank bank = build_bank(layout, a.config.model_spec(), a.config.seed);
    spdlog::info("effective config: {}", config_to_json(a.config).dump());
    spdlog::info("model '{}' with {} parameters", bank.variant().name(), bank.parameter_count());

    const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
    std::string log_text = nlohmann::ordered_json{{"config", config_to_json(a.config)}}.dump() + "\n";
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e) {
        log_text += epoch_to_json(e).dump() + "\n";
        spdlog::info("epoch {} lr {:.6g} loss {:.6f}", e.epoch, e.learning_rate, e.loss);
    };
    hooks.on_checkpoint = [&](std::size_t epoch, const DenoiserBank& b) {
        write_checkpoint(bank_to_checkpoint(b, a.config), a.out + ".epoch" + std::to_string(epoch));
    };
    const auto log = train(bank, ds, a.config, hooks);
    write_checkpoint(bank_to_checkpoint(bank, a.config), a.out);
    detail::write_text(log_path, log_text);
    os << "trained " << log.size() << " epochs";
    if (!log.empty()) os << ", final loss " << log.back().loss;
    os << "\nwrote " << a.out << " and " << log_path << "\n";
    return {kOk, "", {a.out, log_path}};
}

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    std::string out;
    EvalOptions options;
};

inline CommandResult cmd_eval(const EvalArgs& a, std::ostream& os) {
    const LoadedModel model = bank_from_checkpoint(read_checkpoint(a.checkpoint));
    const DatasetFile ds = load_dataset(a.data);
    EvalOptions opt = a.options;
    opt.scale = model.config.scale;
    const MetricsReport report = evaluate(model.bank, ds, model.config, opt);
    os << detail::metrics_table(report);
    CommandResult r;
    if (!a.out.empty()) {
        detail::write_text(a.out, report_to_json(report).dump(2) + "\n");
        r.outputs.push_back(a.out);
    }
    return r;
}

inline CommandResult cmd_infer(const EvalArgs& a, std::ostream& os) {
    const LoadedModel model = bank_from_checkpoint(read_checkpoint(a.checkpoint));
    const DatasetFile ds = load_dataset(a.data);
    if (layout_hash(ds.layout) != layout_hash(model.bank.layout())) {
        throw DataError("dataset " + a.data + " layout does not match the checkpoint");
    }
    EvalOptions opt = a.options;
    opt.scale = model.config.scale;
    const auto poses = infer(model.bank, model.bank.frame_layout(), ds, model.bank.frames(),
                             cosine_schedule(model.config.diffusion_steps, model.config.schedule_offset), opt);
    detail::write_text(a.out, poses_to_jsonl(poses));
    os << "wrote " << poses.size() << " windows to " << a.out << "\n";
    return {kOk, "", {a.out}};
}

inline CommandResult cmd_inspect(const std::string& checkpoint, std::ostream& os) {
    const CheckpointFile ck = read_checkpoint(checkpoint);
    const LoadedModel model = bank_from_checkpoint(ck);
    os << "format_version: " << ck.header.at("format_version").get<std::uint32_t>() << "\n";
    os << "variant: " << model.bank.variant().name() << "\n";
    os << "layout_hash: " << ck.header.at("layout_hash").get<std::string>() << "\n";
    os << "config: " << ck.header.at("config").dump() << "\n";
    os << std::left << std::setw(10) << "network" << std::right << std::setw(8) << "joints" << std::setw(8)
       << "frames" << std::setw(10) << "channels" << std::setw(7) << "depth" << std::setw(12) << "parameters"
       << "\n";
    for (const auto& n : model.bank.networks()) {
        const auto& c = n.config();
        os << std::left << std::setw(10) << c.part << std::right << std::setw(8) << c.joints << std::setw(8)
           << c.frames << std::setw(10) << c.channels << std::setw(7) << c.depth << std::setw(12)
           << count_parameters(n) << "\n";
    }
    os << "total parameters: " << model.bank.parameter_count() << "\n";
    return {};
}

inline CommandResult cmd_layout(const std::string& layout_path, const std::string& out, std::ostream& os) {
    const SkeletonLayout layout = layout_path.empty() ? default_layout() : load_layout(layout_path);
    const std::string text = layout_to_json(layout).dump(2) + "\n";
    CommandResult r;
    if (out.empty()) {
        os << text;
    } else {
        detail::write_text(out, text);
        r.outputs.push_back(out);
    }
    return r;
}

// ---------------------------------------------------------------------------

/// Parses argv-style arguments (without the program name) and runs one subcommand.
inline CommandResult run_cli(const std::vector<std::string>& args, std::ostream& os = std::cout) {
    CLI::App app{"Part-based diffusion lifting of 2D whole-body keypoint sequences to 3D", "pafuse"};
    app.require_subcommand(1);
    app.fallthrough();

    std::size_t threads = 1;
    std::string config_path;
    app.add_option("--threads", threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

    // synth
    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
    s->add_option("--out", synth.out, "Output dataset path")->required();
    s->add_option("--sequences", synth.config.sequences, "Number of sequences")->check(CLI::PositiveNumber);
    s->add_option("--frames", synth.config.frames, "Annotated frames per sequence")->check(CLI::PositiveNumber);
    s->add_option("--amplitude", synth.config.amplitude, "Motion amplitude (0 = static)")->check(CLI::NonNegativeNumber);
    s->add_option("--focal", synth.config.focal, "Pinhole focal length in pixels")->check(CLI::PositiveNumber);
    s->add_option("--stride", synth.config.frame_stride, "Frame-id gap between annotations")->check(CLI::PositiveNumber);
    s->add_flag("--uneven", synth.config.uneven, "Long-tailed frame-id gaps");
    s->add_option("--seed", synth.config.seed, "Random seed");

    // stats
    std::string stats_data, stats_out;
    auto* st = app.add_subcommand("stats", "Frame-gap histograms of a dataset");
    st->add_option("--data", stats_data, "Dataset path")->required();
    st->add_option("--out", stats_out, "Write the JSON histogram here");

    // train
    TrainArgs tr;
    std::optional<std::size_t> epochs, batch, frames, stride, interval;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<std::string> variant, loss, loss_frame;
    auto* t = app.add_subcommand("train", "Train the part denoisers");
    t->add_option("--data", tr.data, "Training dataset");
    t->add_option("--config", config_path, "INI config file");
    t->add_option("--layout", tr.layout, "Layout file (must match the dataset)");
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--log", tr.log, "Epoch log (JSON lines)");
    t->add_option("--epochs", epochs, "Epochs");
    t->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    t->add_option("--frames", frames, "Window length N")->check(CLI::PositiveNumber);
    t->add_option("--stride", stride, "Window stride (0 = N)");
    t->add_option("--seed", seed, "Random seed");
    t->add_option("--lr", lr, "Initial learning rate")->check(CLI::PositiveNumber);
    t->add_option("--variant", variant, "full | shift_only | parts_only | monolithic");
    t->add_option("--loss", loss, "mpjpe | mse");
    t->add_option("--loss-frame", loss_frame, "part | wb");
    t->add_option("--checkpoint-interval", interval, "Extra checkpoint every this many epochs");

    // eval / infer
    EvalArgs ev;
    auto add_eval = [&](CLI::App* c, bool out_required) {
        c->add_option("--data", ev.data, "Dataset")->required();
        c->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
        auto* o = c->add_option("--out", ev.out, "Output path");
        if (out_required) o->required();
        c->add_option("--hypotheses,-H", ev.options.hypotheses, "Hypotheses H")->check(CLI::PositiveNumber);
        c->add_option("--iterations,-K", ev.options.iterations, "DDIM iterations K")->check(CLI::PositiveNumber);
        c->add_option("--seed", ev.options.seed, "Sampling seed");
    };
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (P-Best / P-Agg MPJPE)");
    add_eval(e, false);
    auto* inf = app.add_subcommand("infer", "Export predicted 3D windows as JSON lines");
    add_eval(inf, true);

    // inspect / layout
    std::string inspect_path;
    auto* in = app.add_subcommand("inspect", "Print checkpoint configuration and parameter counts");
    in->add_option("checkpoint,--checkpoint", inspect_path, "Checkpoint")->required();
    std::string layout_path, layout_out;
    bool dump = false;
    auto* lay = app.add_subcommand("layout", "Print a skeleton layout");
    lay->add_flag("--dump", dump, "Emit the layout JSON");
    lay->add_option("--layout", layout_path, "Layout file (default: built-in)");
    lay->add_option("--out", layout_out, "Write to this path");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        os << app.help();
        return {};
    } catch (const CLI::CallForAllHelp&) {
        os << app.help("", CLI::AppFormatMode::All);
        return {};
    } catch (const CLI::ParseError& err) {
        return {kUsage, err.what(), {}};
    }

    try {
        if (*s) return cmd_synth(synth, os);
        if (*st) return cmd_stats(stats_data, stats_out, os);
        if (*t) {
            RunConfig rc;
            if (!config_path.empty()) rc = load_run_config(config_path);
            tr.config = rc.train;
            if (tr.data.empty()) tr.data = rc.data_path;
            if (tr.layout.empty()) tr.layout = rc.layout_path;
            if (tr.data.empty()) return {kUsage, "train: no dataset given (--data or [data] train)", {}};
            if (epochs) tr.config.epochs = *epochs;
            if (batch) tr.config.batch = *batch;
            if (frames) tr.config.frames = *frames;
            if (stride) tr.config.window_stride = *stride;
            if (seed) tr.config.seed = *seed;
            if (lr) tr.config.learning_rate = *lr;
            if (variant) tr.config.variant = *variant;
            if (loss) tr.config.loss = parse_loss_kind(*loss);
            if (loss_frame) tr.config.loss_frame = parse_loss_frame(*loss_frame);
            if (interval) tr.config.checkpoint_interval = *interval;
            tr.config.threads = threads;
            return cmd_train(tr, os);
        }
        ev.options.threads = threads;
        if (*e) return cmd_eval(ev, os);
        if (*inf) return cmd_infer(ev, os);
        if (*in) return cmd_inspect(inspect_path, os);
        if (*lay) {
            if (!dump) return {kUsage, "layout: nothing to do (use --dump)", {}};
            return cmd_layout(layout_path, layout_out, os);
        }
    } catch (const ConfigError& err) {
        return {kUsage, err.what(), {}};
    } catch (const NumericError& err) {
        return {kNumeric, err.what(), {}};
    } catch (const Error& err) {
        return {kData, err.what(), {}};
    }
    return {kUsage, "no subcommand", {}};
}

}  // namespace pafuse::cli
