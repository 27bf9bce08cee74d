#pragma once

// AdamW training of a denoiser bank on one-step denoising, checkpoint conversion and
// end-to-end evaluation / inference.

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "json.hpp"

#include "pafuse/checkpoint.hpp"
#include "pafuse/data.hpp"
#include "pafuse/diffusion.hpp"
#include "pafuse/model.hpp"
#include "pafuse/objective.hpp"
#include "pafuse/parallel.hpp"

namespace pafuse {

enum class LossFrame { Part, WholeBody };

inline LossFrame parse_loss_frame(const std::string& s) {
    if (s == "part") return LossFrame::Part;
    if (s == "wb") return LossFrame::WholeBody;
    throw ConfigError("unknown loss frame '" + s + "' (expected part or wb)");
}

inline std::string to_string(LossFrame f) { return f == LossFrame::Part ? "part" : "wb"; }

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.1;
    std::size_t epochs = 20;
    std::size_t batch = 8;
    std::size_t frames = 9;        // N
    std::size_t window_stride = 0; // 0 -> N (non-overlapping windows)
    int diffusion_steps = 1000;    // T
    double schedule_offset = 0.008;
    LossKind loss = LossKind::Mpjpe;
    LossFrame loss_frame = LossFrame::Part;
    double scale = 0.001;
    double lr_decay = 0.99;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 0;  // epochs; 0 -> only at the end
    std::size_t threads = 1;

    std::string variant = "full";
    std::size_t depth = 2;
    std::map<std::string, std::size_t> widths = default_widths();

    /// Full-scale settings (N = 27).
    static TrainConfig full_scale() {
        TrainConfig c;
        c.learning_rate = 6e-5;
        c.epochs = 400;
        c.batch = 36;
        c.frames = 27;
        c.widths = {{kBody, 384}, {kHandsNetwork, 256}, {kFace, 224}, {kWholeNetwork, 512}};
        return c;
    }

    std::size_t stride() const { return window_stride == 0 ? frames : window_stride; }

    ModelSpec model_spec() const {
        return {ModelVariant::parse(variant), frames, depth, widths};
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
        if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
        if (batch < 1) throw ConfigError("batch size must be positive");
        if (frames < 1) throw ConfigError("window length must be positive");
        if (diffusion_steps < 1) throw ConfigError("diffusion steps must be positive");
        if (!(schedule_offset > 0.0)) throw ConfigError("schedule offset must be positive");
        if (!(scale > 0.0)) throw ConfigError("data scale must be positive");
        if (!(lr_decay > 0.0)) throw ConfigError("lr decay must be positive");
        if (depth < 1) throw ConfigError("depth must be at least 1");
        ModelVariant::parse(variant);
    }
};

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json widths;
    for (const auto& [k, v] : c.widths) widths[k] = v;
    return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
            {"epsilon", c.epsilon}, {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
            {"batch", c.batch}, {"frames", c.frames}, {"window_stride", c.window_stride},
            {"diffusion_steps", c.diffusion_steps}, {"schedule_offset", c.schedule_offset},
            {"loss", to_string(c.loss)}, {"loss_frame", to_string(c.loss_frame)}, {"scale", c.scale},
            {"lr_decay", c.lr_decay}, {"seed", c.seed}, {"checkpoint_interval", c.checkpoint_interval},
            {"variant", c.variant}, {"depth", c.depth}, {"widths", widths}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.learning_rate = j.at("learning_rate").get<double>();
        c.beta1 = j.at("beta1").get<double>();
        c.beta2 = j.at("beta2").get<double>();
        c.epsilon = j.at("epsilon").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.epochs = j.at("epochs").get<std::size_t>();
        c.batch = j.at("batch").get<std::size_t>();
        c.frames = j.at("frames").get<std::size_t>();
        c.window_stride = j.at("window_stride").get<std::size_t>();
        c.diffusion_steps = j.at("diffusion_steps").get<int>();
        c.schedule_offset = j.at("schedule_offset").get<double>();
        c.loss = parse_loss_kind(j.at("loss").get<std::string>());
        c.loss_frame = parse_loss_frame(j.at("loss_frame").get<std::string>());
        c.scale = j.at("scale").get<double>();
        c.lr_decay = j.at("lr_decay").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.checkpoint_interval = j.at("checkpoint_interval").get<std::size_t>();
        c.variant = j.at("variant").get<std::string>();
        c.depth = j.at("depth").get<std::size_t>();
        c.widths.clear();
        for (const auto& [k, v] : j.at("widths").items()) c.widths[k] = v.get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline CheckpointFile bank_to_checkpoint(const DenoiserBank& bank, const TrainConfig& config) {
    CheckpointFile ck;
    nlohmann::ordered_json nets = nlohmann::ordered_json::array();
    for (const auto& n : bank.networks()) {
        const auto& c = n.config();
        nets.push_back({{"name", c.part}, {"joints", c.joints}, {"frames", c.frames},
                        {"channels", c.channels}, {"depth", c.depth}, {"parameters", count_parameters(n)}});
    }
    ck.header = {{"format", "pafuse-checkpoint"},
                 {"format_version", kCheckpointVersion},
                 {"variant", bank.variant().name()},
                 {"config", config_to_json(config)},
                 {"layout", layout_to_json(bank.layout())},
                 {"layout_hash", layout_hash(bank.layout())},
                 {"schedule", {{"steps", config.diffusion_steps}, {"offset", config.schedule_offset}}},
                 {"networks", nets}};
    for (const auto& n : bank.networks()) {
        for (const auto& p : n.parameters()) {
            ck.arrays.push_back({n.config().part + "/" + p.name,
                                 {static_cast<std::uint64_t>(p.value.rows()), static_cast<std::uint64_t>(p.value.cols())},
                                 std::vector<double>(p.value.data(), p.value.data() + p.value.size())});
        }
    }
    return ck;
}

struct LoadedModel {
    DenoiserBank bank;
    TrainConfig config;
};

inline LoadedModel bank_from_checkpoint(const CheckpointFile& ck) {
    try {
        const auto& h = ck.header;
        const SkeletonLayout layout = layout_from_json(h.at("layout"));
        if (layout_hash(layout) != h.at("layout_hash").get<std::string>()) {
            throw DataError("checkpoint: layout hash mismatch");
        }
        TrainConfig config = config_from_json(h.at("config"));
        const ModelVariant variant = ModelVariant::parse(h.at("variant").get<std::string>());
        std::vector<Denoiser> nets;
        for (const auto& nj : h.at("networks")) {
            DenoiserConfig c{nj.at("name").get<std::string>(), nj.at("joints").get<std::size_t>(),
                             nj.at("frames").get<std::size_t>(), nj.at("channels").get<std::size_t>(),
                             nj.at("depth").get<std::size_t>()};
            std::vector<NamedArray> params;
            for (const auto& s : parameter_shapes(c)) {
                const StoredArray& a = ck.array(c.part + "/" + s.name);
                if (a.shape != std::vector<std::uint64_t>{s.rows, s.cols}) {
                    throw DataError("checkpoint: array '" + a.name + "' has the wrong shape");
                }
                ad::Matrix m(static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
                std::copy(a.values.begin(), a.values.end(), m.data());
                params.push_back({s.name, std::move(m)});
            }
            nets.emplace_back(std::move(c), std::move(params));
        }
        return {DenoiserBank(layout, variant, std::move(nets)), std::move(config)};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// AdamW

struct MomentPair {
    ad::Matrix first;
    ad::Matrix second;
};

struct OptimizerState {
    std::vector<std::vector<MomentPair>> moments;  // [network][parameter]
    std::uint64_t step = 0;

    static OptimizerState for_bank(const DenoiserBank& bank) {
        OptimizerState s;
        for (const auto& n : bank.networks()) {
            std::vector<MomentPair> m;
            for (const auto& p : n.parameters()) {
                m.push_back({ad::Matrix::Zero(p.value.rows(), p.value.cols()),
                             ad::Matrix::Zero(p.value.rows(), p.value.cols())});
            }
            s.moments.push_back(std::move(m));
        }
        return s;
    }
};

struct AdamWSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.1;
};

/// One decoupled-weight-decay Adam update; `step` is the 1-based step index after
/// incrementing. param -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * param).
inline void adamw_update(ad::Matrix& param, const ad::Matrix& grad, MomentPair& moments, std::uint64_t step,
                         const AdamWSettings& s) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols() || moments.first.rows() != param.rows() ||
        moments.first.cols() != param.cols() || moments.second.rows() != param.rows() ||
        moments.second.cols() != param.cols()) {
        throw ShapeError("adamw_update: shape mismatch");
    }
    if (step < 1) throw ConfigError("adamw_update: step index starts at 1");
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
    for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double g = grad.data()[i];
        double& m = moments.first.data()[i];
        double& v = moments.second.data()[i];
        m = s.beta1 * m + (1.0 - s.beta1) * g;
        v = s.beta2 * v + (1.0 - s.beta2) * g * g;
        const double m_hat = m / c1;
        const double v_hat = v / c2;
        double& p = param.data()[i];
        p -= s.learning_rate * (m_hat / (std::sqrt(v_hat) + s.epsilon) + s.weight_decay * p);
    }
}

using BankGradients = std::vector<std::vector<ad::Matrix>>;  // [network][parameter]

inline void apply_adamw(DenoiserBank& bank, const BankGradients& grads, OptimizerState& state,
                        const AdamWSettings& s) {
    ++state.step;
    auto& nets = bank.networks();
    for (std::size_t i = 0; i < nets.size(); ++i) {
        auto& params = nets[i].parameters();
        for (std::size_t k = 0; k < params.size(); ++k) {
            adamw_update(params[k].value, grads[i][k], state.moments[i][k], state.step, s);
        }
    }
}

// ---------------------------------------------------------------------------
// Training objective

/// A window prepared for the networks: scaled local targets and normalized 2D inputs.
struct PreparedWindow {
    PartTensors x2d;       // normalized, N x J_part x 2
    PartTensors target;    // scaled local part frames, N x J_part x 3
    RootOffsets offsets;   // scaled, frame layout
};

inline PartTensors prepare_inputs(const Tensor3& kp2d, const SkeletonLayout& layout, double width, double height) {
    return split_part_tensors(normalize_2d(kp2d, width, height), layout);
}

inline PreparedWindow prepare_window(const Window& w, const DenoiserBank& bank, double width, double height,
                                     double scale) {
    if (!w.kp3d) throw DataError("window of sequence '" + w.sequence_id + "' has no 3D ground truth");
    PreparedWindow p;
    p.x2d = prepare_inputs(w.kp2d, bank.layout(), width, height);
    PartFrames frames = shift_to_part_frames(*w.kp3d, bank.frame_layout());
    for (auto& [name, t] : frames.local)
        for (double& v : t.values) v *= scale;
    for (double& v : frames.offsets.values.values) v *= scale;
    p.target = std::move(frames.local);
    p.offsets = std::move(frames.offsets);
    return p;
}

/// Part weights of the loss: joint share (concatenation) or equal per part.
inline std::map<std::string, double> loss_weights(const SkeletonLayout& layout, bool balanced) {
    std::map<std::string, double> w;
    for (const auto& p : layout.parts()) {
        w[p.name] = balanced ? 1.0 / static_cast<double>(layout.part_count())
                             : static_cast<double>(p.joints.size()) / static_cast<double>(layout.total_joints());
    }
    return w;
}

namespace detail {
inline ad::Var part_term(ad::Tape& tape, ad::Var pred, const ad::Matrix& target, LossKind kind) {
    return kind == LossKind::Mpjpe ? tape.mean_row_norm(pred, target) : tape.mean_squared(pred, target);
}
}  // namespace detail

/// Builds the loss of one window on `tape` for a given noisy input. Part loss compares
/// local frames; the WB loss adds offsets read off the predicted body (pred) and the true
/// offsets (target) before comparing.
inline ad::Var window_loss(ad::Tape& tape, const DenoiserBank& bank, const std::vector<Denoiser::Bound>& bound,
                           const PreparedWindow& w, int t, const PartTensors& noisy, const TrainConfig& cfg) {
    const auto pred = bank.forward(tape, bound, t, w.x2d, noisy);
    const SkeletonLayout& layout = bank.frame_layout();
    const auto weights = loss_weights(layout, bank.variant().balanced_loss);
    const PartSpec& body = layout.body();
    const std::size_t N = bank.frames();
    std::vector<ad::Var> terms;
    for (std::size_t p = 0; p < layout.part_count(); ++p) {
        const PartSpec& part = layout.parts()[p];
        ad::Var out = pred.at(part.name);
        ad::Matrix target = Denoiser::to_rows(w.target.at(part.name));
        if (cfg.loss_frame == LossFrame::WholeBody && part.name != body.name) {
            const std::size_t root = body.local_index(part.root);
            const std::size_t J = part.joints.size();
            std::vector<std::size_t> rows(N * J);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < J; ++k) rows[n * J + k] = n * body.joints.size() + root;
            out = tape.add(out, tape.gather_rows(pred.at(body.name), std::move(rows)));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < J; ++k)
                    for (std::size_t d = 0; d < 3; ++d)
                        target(static_cast<Eigen::Index>(n * J + k), static_cast<Eigen::Index>(d)) +=
                            w.offsets.values(n, p, d);
        }
        terms.push_back(tape.scale(detail::part_term(tape, out, target, cfg.loss), weights.at(part.name)));
    }
    return tape.sum(terms);
}

/// Timestep (uniform on 1..T) and per-part noise of one window, from its own seed.
struct NoiseDraw {
    int t = 1;
    PartTensors noise;
};

inline NoiseDraw draw_noise(const PreparedWindow& w, const SkeletonLayout& layout, int steps, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    NoiseDraw d;
    d.t = std::uniform_int_distribution<int>(1, steps)(rng);
    for (const auto& p : layout.parts()) {
        const Tensor3& target = w.target.at(p.name);
        d.noise.emplace(p.name, standard_normal(target.frames, target.joints, 3, rng));
    }
    return d;
}

struct StepResult {
    double loss = 0.0;
    BankGradients grads;
};

/// Mean loss over the batch and its gradient. Window i draws its noise from
/// derive_seed(step_seed, i); gradients are reduced in window order.
inline StepResult batch_gradient(const DenoiserBank& bank, const std::vector<const PreparedWindow*>& batch,
                                 const NoiseSchedule& schedule, const TrainConfig& cfg, std::uint64_t step_seed) {
    if (batch.empty()) throw DataError("train_step: empty batch");
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<double> losses(batch.size());
    std::vector<BankGradients> grads(batch.size());
    parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
        const PreparedWindow& w = *batch[i];
        const NoiseDraw draw = draw_noise(w, bank.frame_layout(), schedule.steps, derive_seed(step_seed, i));
        PartTensors noisy;
        for (const auto& [name, target] : w.target) {
            noisy.emplace(name, forward_noise(target, draw.t, schedule, draw.noise.at(name)));
        }
        ad::Tape tape;
        const auto bound = bank.bind(tape);
        const ad::Var loss = window_loss(tape, bank, bound, w, draw.t, noisy, cfg);
        losses[i] = tape.value(loss)(0, 0);
        tape.backward(loss, inv);
        grads[i].resize(bound.size());
        for (std::size_t n = 0; n < bound.size(); ++n) {
            for (ad::Var v : bound[n]) grads[i][n].push_back(tape.grad(v));
        }
    });
    StepResult r;
    r.grads = std::move(grads[0]);
    r.loss = losses[0];
    for (std::size_t i = 1; i < batch.size(); ++i) {
        r.loss += losses[i];
        for (std::size_t n = 0; n < r.grads.size(); ++n)
            for (std::size_t k = 0; k < r.grads[n].size(); ++k) r.grads[n][k] += grads[i][n][k];
    }
    r.loss *= inv;
    if (!std::isfinite(r.loss)) throw NumericError("training loss is not finite");
    return r;
}

inline AdamWSettings adamw_settings(const TrainConfig& cfg, double learning_rate) {
    return {learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay};
}

/// One optimisation step on a batch; returns the batch loss before the update.
inline double train_step(DenoiserBank& bank, const std::vector<const PreparedWindow*>& batch,
                         const NoiseSchedule& schedule, const TrainConfig& cfg, OptimizerState& state,
                         double learning_rate, std::uint64_t step_seed) {
    const StepResult r = batch_gradient(bank, batch, schedule, cfg, step_seed);
    apply_adamw(bank, r.grads, state, adamw_settings(cfg, learning_rate));
    return r.loss;
}

struct EpochLog {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double loss = 0.0;
};

inline nlohmann::ordered_json epoch_to_json(const EpochLog& e) {
    return {{"epoch", e.epoch}, {"lr", e.learning_rate}, {"loss", e.loss}};
}

inline std::vector<Window> training_windows(const DatasetFile& ds, std::size_t frames, std::size_t stride) {
    std::vector<Window> out;
    for (const auto& s : ds.sequences) {
        if (!s.kp3d) throw DataError("sequence '" + s.id + "' has no 3D ground truth");
        for (auto& w : make_windows(s, frames, stride)) out.push_back(std::move(w));
    }
    return out;
}

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    std::function<void(std::size_t epoch, const DenoiserBank&)> on_checkpoint;
};

/// Epoch loop over seeded-shuffled windows with per-epoch exponential lr decay.
inline std::vector<EpochLog> train(DenoiserBank& bank, const DatasetFile& ds, const TrainConfig& cfg,
                                   const TrainHooks& hooks = {}) {
    cfg.validate();
    if (layout_hash(ds.layout) != layout_hash(bank.layout())) {
        throw DataError("dataset layout does not match the model layout");
    }
    const auto windows = training_windows(ds, cfg.frames, cfg.stride());
    if (windows.empty()) {
        throw DataError("no windows of length " + std::to_string(cfg.frames) + " in the training data");
    }
    std::vector<PreparedWindow> prepared;
    prepared.reserve(windows.size());
    for (const auto& w : windows) prepared.push_back(prepare_window(w, bank, ds.image_width, ds.image_height, cfg.scale));

    const NoiseSchedule schedule = cosine_schedule(cfg.diffusion_steps, cfg.schedule_offset);
    OptimizerState state = OptimizerState::for_bank(bank);
    std::vector<std::size_t> order(prepared.size());
    std::vector<EpochLog> log;
    double lr = cfg.learning_rate;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x5348554646ULL + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch) {
            std::vector<const PreparedWindow*> batch;
            for (std::size_t i = first; i < std::min(order.size(), first + cfg.batch); ++i) {
                batch.push_back(&prepared[order[i]]);
            }
            total += train_step(bank, batch, schedule, cfg, state, lr, derive_seed(cfg.seed, step++));
            ++batches;
        }
        log.push_back({epoch + 1, lr, total / static_cast<double>(batches)});
        if (hooks.on_epoch) hooks.on_epoch(log.back());
        if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
            epoch + 1 < cfg.epochs) {
            hooks.on_checkpoint(epoch + 1, bank);
        }
        lr *= cfg.lr_decay;
    }
    return log;
}

// ---------------------------------------------------------------------------
// Evaluation and inference

struct EvalOptions {
    int hypotheses = 20;   // H
    int iterations = 10;   // K
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t stride = 0;  // 0 -> N
    double scale = 0.001;
};

/// Hypothesis set of one window; the sampling seed is derive_seed(seed, window index).
template <PartPredictor P>
HypothesisSet sample_window(const P& predictor, const SkeletonLayout& frame_layout, const Window& w,
                            double width, double height, const NoiseSchedule& schedule, const EvalOptions& opt,
                            std::size_t window_index) {
    const PartTensors x2d = prepare_inputs(w.kp2d, frame_layout, width, height);
    SamplingOptions so{opt.iterations, opt.hypotheses, derive_seed(opt.seed, window_index), opt.scale, 1};
    return sample_hypotheses(predictor, x2d, frame_layout, schedule, so);
}

inline std::vector<Window> evaluation_windows(const DatasetFile& ds, std::size_t frames, std::size_t stride) {
    std::vector<Window> out;
    for (const auto& s : ds.sequences)
        for (auto& w : make_windows(s, frames, stride == 0 ? frames : stride)) out.push_back(std::move(w));
    return out;
}

/// P-Agg metrics on the averaged hypothesis and per-column P-Best minima, averaged over windows.
template <PartPredictor P>
MetricsReport evaluate(const P& predictor, const SkeletonLayout& frame_layout, const DatasetFile& ds,
                       std::size_t frames, const NoiseSchedule& schedule, const EvalOptions& opt) {
    const auto windows = evaluation_windows(ds, frames, opt.stride);
    for (const auto& w : windows) {
        if (!w.kp3d) throw DataError("evaluation needs 3D ground truth; sequence '" + w.sequence_id + "' has none");
    }
    if (windows.empty()) throw DataError("no evaluation windows of length " + std::to_string(frames));
    std::vector<MetricRow> best(windows.size()), agg(windows.size());
    parallel_for(windows.size(), opt.threads, [&](std::size_t i) {
        const HypothesisSet hyps =
            sample_window(predictor, frame_layout, windows[i], ds.image_width, ds.image_height, schedule, opt, i);
        best[i] = best_row(hyps, *windows[i].kp3d, ds.layout);
        agg[i] = evaluate_row(aggregate_hypotheses(hyps), *windows[i].kp3d, ds.layout);
    });
    MetricsReport r;
    r.frames = frames;
    r.hypotheses = opt.hypotheses;
    r.iterations = opt.iterations;
    r.windows = windows.size();
    r.p_best = mean_rows(best);
    r.p_agg = mean_rows(agg);
    return r;
}

inline MetricsReport evaluate(const DenoiserBank& bank, const DatasetFile& ds, const TrainConfig& cfg,
                              const EvalOptions& opt) {
    if (layout_hash(ds.layout) != layout_hash(bank.layout())) {
        throw DataError("dataset layout does not match the model layout");
    }
    return evaluate(bank, bank.frame_layout(), ds, bank.frames(),
                    cosine_schedule(cfg.diffusion_steps, cfg.schedule_offset), opt);
}

struct PoseExport {
    std::string sequence_id;
    std::size_t window_start = 0;
    std::vector<std::int64_t> frame_ids;
    Tensor3 kp3d;  // N x J x 3 millimetres, body root at the origin

    bool operator==(const PoseExport&) const = default;
};

/// Averaged-hypothesis pose per window; needs only 2D keypoints.
template <PartPredictor P>
std::vector<PoseExport> infer(const P& predictor, const SkeletonLayout& frame_layout, const DatasetFile& ds,
                              std::size_t frames, const NoiseSchedule& schedule, const EvalOptions& opt) {
    const auto windows = evaluation_windows(ds, frames, opt.stride);
    std::vector<PoseExport> out(windows.size());
    parallel_for(windows.size(), opt.threads, [&](std::size_t i) {
        const HypothesisSet hyps =
            sample_window(predictor, frame_layout, windows[i], ds.image_width, ds.image_height, schedule, opt, i);
        out[i] = {windows[i].sequence_id, windows[i].start, windows[i].frame_ids, aggregate_hypotheses(hyps)};
    });
    return out;
}

inline nlohmann::ordered_json pose_to_json(const PoseExport& p) {
    nlohmann::ordered_json frames = nlohmann::ordered_json::array();
    for (std::size_t n = 0; n < p.kp3d.frames; ++n) frames.push_back(detail::write_points(p.kp3d, n));
    return {{"sequence", p.sequence_id}, {"window_start", p.window_start}, {"frame_ids", p.frame_ids},
            {"kp3d", std::move(frames)}};
}

inline PoseExport pose_from_json(const nlohmann::json& j) {
    try {
        PoseExport p;
        p.sequence_id = j.at("sequence").get<std::string>();
        p.window_start = j.at("window_start").get<std::size_t>();
        p.frame_ids = j.at("frame_ids").get<std::vector<std::int64_t>>();
        const auto& frames = j.at("kp3d");
        const std::size_t J = frames.empty() ? 0 : frames[0].size();
        p.kp3d = Tensor3(frames.size(), J, 3);
        for (std::size_t n = 0; n < frames.size(); ++n) {
            detail::copy_frame(detail::read_points(frames[n], J, 3, p.sequence_id, n, "kp3d"), p.kp3d, n);
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("pose export: ") + e.what());
    }
}

/// One JSON document per line.
inline std::string poses_to_jsonl(const std::vector<PoseExport>& poses) {
    std::string out;
    for (const auto& p : poses) out += pose_to_json(p).dump() + "\n";
    return out;
}

inline std::vector<PoseExport> poses_from_jsonl(const std::string& text) {
    std::vector<PoseExport> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(pose_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("pose export: ") + e.what());
        }
    }
    return out;
}

/// Per-joint mean of root-centred training poses, used as a zero-motion reference.
inline Tensor3 mean_pose(const DatasetFile& ds) {
    const std::size_t J = ds.layout.total_joints();
    const std::size_t root = ds.layout.body().root;
    Tensor3 mean(1, J, 3);
    std::size_t count = 0;
    for (const auto& s : ds.sequences) {
        if (!s.kp3d) continue;
        for (std::size_t n = 0; n < s.frames(); ++n) {
            for (std::size_t j = 0; j < J; ++j)
                for (std::size_t d = 0; d < 3; ++d) mean(0, j, d) += (*s.kp3d)(n, j, d) - (*s.kp3d)(n, root, d);
            ++count;
        }
    }
    if (count == 0) throw DataError("mean_pose: no 3D frames");
    for (double& v : mean.values) v /= static_cast<double>(count);
    return mean;
}

/// Mean over evaluation windows of metric_wb when every frame is predicted as `pose`.
inline double constant_pose_wb(const Tensor3& pose, const DatasetFile& ds, std::size_t frames, std::size_t stride) {
    const auto windows = evaluation_windows(ds, frames, stride);
    if (windows.empty()) throw DataError("no evaluation windows");
    double total = 0.0;
    for (const auto& w : windows) {
        Tensor3 pred(frames, pose.joints, 3);
        for (std::size_t n = 0; n < frames; ++n)
            std::copy(pose.values.begin(), pose.values.end(),
                      pred.values.begin() + static_cast<std::ptrdiff_t>(n * pose.size()));
        total += metric_wb(pred, *w.kp3d, ds.layout);
    }
    return total / static_cast<double>(windows.size());
}

}  // namespace pafuse
