#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pafuse;

namespace {

/// Random smooth-ish 3D motion on the tiny layout, projected with a pinhole camera.
DatasetFile tiny_dataset(std::size_t sequences, std::size_t frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DatasetFile ds;
    ds.layout = oracle::tiny_layout();
    ds.camera = Camera{};
    const Tensor3 base = oracle::random_tensor(1, 12, 3, rng, 200.0);
    for (std::size_t s = 0; s < sequences; ++s) {
        SequenceData q;
        q.id = "t" + std::to_string(s);
        q.kp2d = Tensor3(frames, 12, 2);
        Tensor3 kp3d(frames, 12, 3);
        const Tensor3 drift = oracle::random_tensor(1, 12, 3, rng, 20.0);
        for (std::size_t n = 0; n < frames; ++n) {
            q.frame_ids.push_back(static_cast<std::int64_t>(n));
            for (std::size_t j = 0; j < 12; ++j) {
                for (std::size_t d = 0; d < 3; ++d)
                    kp3d(n, j, d) = base(0, j, d) + std::sin(0.3 * static_cast<double>(n)) * drift(0, j, d);
                kp3d(n, j, 2) += 4000.0;
                const auto uv = ds.camera->project(kp3d(n, j, 0), kp3d(n, j, 1), kp3d(n, j, 2));
                q.kp2d(n, j, 0) = uv[0];
                q.kp2d(n, j, 1) = uv[1];
            }
        }
        q.kp3d = kp3d;
        ds.sequences.push_back(std::move(q));
    }
    return ds;
}

TrainConfig tiny_config(const std::string& variant = "full") {
    TrainConfig c;
    c.frames = 3;
    c.depth = 1;
    c.batch = 4;
    c.epochs = 2;
    c.variant = variant;
    c.diffusion_steps = 100;
    c.widths = {{kBody, 8}, {kFace, 6}, {kHandsNetwork, 4}, {kWholeNetwork, 8}};
    return c;
}

DenoiserBank randomized_bank(const TrainConfig& c, std::uint64_t seed) {
    DenoiserBank bank = build_bank(oracle::tiny_layout(), c.model_spec(), seed);
    std::mt19937_64 rng(seed + 100);
    for (auto& n : bank.networks()) oracle::randomize_zero_arrays(n, rng);
    return bank;
}

}  // namespace

TEST(AdamW, MatchesReferenceRecurrence) {
    std::mt19937_64 rng(1);
    const AdamWSettings s{1e-2, 0.9, 0.999, 1e-8, 0.1};
    ad::Matrix p = ad::Matrix::Random(3, 4);
    MomentPair mom{ad::Matrix::Zero(3, 4), ad::Matrix::Zero(3, 4)};
    std::vector<double> ref(p.data(), p.data() + p.size());
    std::vector<oracle::AdamWScalar> opt(ref.size(), {s.learning_rate, s.beta1, s.beta2, s.epsilon, s.weight_decay});
    std::normal_distribution<double> g;
    for (std::uint64_t step = 1; step <= 5; ++step) {
        ad::Matrix grad(3, 4);
        for (Eigen::Index i = 0; i < grad.size(); ++i) grad.data()[i] = g(rng);
        adamw_update(p, grad, mom, step, s);
        for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = opt[i].step(ref[i], grad.data()[i]);
    }
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(p.data()[i], ref[i], 1e-12);
}

TEST(AdamW, ZeroGradientZeroDecayIsFixedPoint) {
    const AdamWSettings s{1e-2, 0.9, 0.999, 1e-8, 0.0};
    const ad::Matrix start = ad::Matrix::Random(2, 2);
    ad::Matrix p = start;
    MomentPair mom{ad::Matrix::Zero(2, 2), ad::Matrix::Zero(2, 2)};
    for (std::uint64_t step = 1; step <= 10; ++step) adamw_update(p, ad::Matrix::Zero(2, 2), mom, step, s);
    EXPECT_EQ(p, start);
}

TEST(AdamW, WeightDecayOnlyShrinks) {
    const AdamWSettings s{0.1, 0.9, 0.999, 1e-8, 0.5};
    ad::Matrix p = ad::Matrix::Constant(1, 1, 2.0);
    MomentPair mom{ad::Matrix::Zero(1, 1), ad::Matrix::Zero(1, 1)};
    adamw_update(p, ad::Matrix::Zero(1, 1), mom, 1, s);
    EXPECT_DOUBLE_EQ(p(0, 0), 2.0 - 0.1 * 0.5 * 2.0);
    EXPECT_THROW(adamw_update(p, ad::Matrix::Zero(2, 1), mom, 1, s), ShapeError);
    EXPECT_THROW(adamw_update(p, ad::Matrix::Zero(1, 1), mom, 0, s), ConfigError);
}

TEST(Loss, Weights) {
    const auto w = loss_weights(default_layout(), false);
    EXPECT_DOUBLE_EQ(w.at(kBody), 23.0 / 133.0);
    EXPECT_DOUBLE_EQ(w.at(kFace), 68.0 / 133.0);
    const auto b = loss_weights(default_layout(), true);
    for (const auto& [k, v] : b) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Loss, WindowLossEqualsObjective) {
    // The tape loss with the true offsets added matches the library's part/WB losses.
    const TrainConfig c = tiny_config();
    DenoiserBank bank = randomized_bank(c, 3);
    const DatasetFile ds = tiny_dataset(1, 3, 4);
    const auto w = make_windows(ds.sequences[0], 3, 3)[0];
    const PreparedWindow pw = prepare_window(w, bank, ds.image_width, ds.image_height, c.scale);
    const NoiseDraw draw = draw_noise(pw, bank.frame_layout(), 100, 9);
    PartTensors noisy;
    const NoiseSchedule s = cosine_schedule(100);
    for (const auto& [name, t] : pw.target) noisy.emplace(name, forward_noise(t, draw.t, s, draw.noise.at(name)));
    const PartTensors pred = bank.predict(draw.t, pw.x2d, noisy);
    for (LossFrame frame : {LossFrame::Part, LossFrame::WholeBody}) {
        TrainConfig cf = c;
        cf.loss_frame = frame;
        ad::Tape tape;
        std::vector<Denoiser::Bound> bound;
        for (const auto& n : bank.networks()) bound.push_back(n.bind(tape));
        const double got = tape.value(window_loss(tape, bank, bound, pw, draw.t, noisy, cf))(0, 0);
        const double want =
            frame == LossFrame::Part
                ? part_loss(pred, pw.target, bank.frame_layout(), LossKind::Mpjpe)
                : wb_loss(pred, derive_root_offsets_from_body(pred.at(kBody), bank.frame_layout()), pw.target,
                          pw.offsets, bank.frame_layout(), LossKind::Mpjpe);
        EXPECT_NEAR(got, want, 1e-12);
    }
}

TEST(Loss, GradientsMatchFiniteDifferences) {
    const DatasetFile ds = tiny_dataset(1, 3, 5);
    const auto w = make_windows(ds.sequences[0], 3, 3)[0];
    for (const char* variant : {"full", "monolithic"}) {
        for (LossFrame frame : {LossFrame::Part, LossFrame::WholeBody}) {
            TrainConfig c = tiny_config(variant);
            c.loss_frame = frame;
            c.widths = {{kBody, 4}, {kFace, 4}, {kHandsNetwork, 4}, {kWholeNetwork, 4}};
            c.scale = 0.01;
            const DenoiserBank bank = randomized_bank(c, 6);
            const PreparedWindow pw = prepare_window(w, bank, ds.image_width, ds.image_height, c.scale);
            const oracle::BankLoss loss = [&](ad::Tape& t, const DenoiserBank& b,
                                              const std::vector<Denoiser::Bound>& bound) {
                return window_loss(t, b, bound, pw, 40, pw.target, c);
            };
            const auto r = oracle::check_bank_gradients(bank, loss, 1e-5, 1e-5, 1500);
            EXPECT_LT(r.worst, 1e-4) << variant << " " << to_string(frame);
        }
    }
}

TEST(Loss, SharedHandNetworkSumsGradients) {
    // Gradient w.r.t. the shared hand network equals the sum over both hand routes.
    const TrainConfig c = tiny_config();
    const DenoiserBank bank = randomized_bank(c, 7);
    const DatasetFile ds = tiny_dataset(1, 3, 8);
    const PreparedWindow pw =
        prepare_window(make_windows(ds.sequences[0], 3, 3)[0], bank, ds.image_width, ds.image_height, c.scale);
    const std::size_t hands = bank.network_index(kHandsNetwork);
    auto hand_grad = [&](const std::vector<std::string>& parts) {
        ad::Tape tape;
        std::vector<Denoiser::Bound> bound;
        for (const auto& n : bank.networks()) bound.push_back(n.bind(tape));
        const auto pred = bank.forward(tape, bound, 30, pw.x2d, pw.target);
        std::vector<ad::Var> terms;
        for (const auto& p : parts) terms.push_back(tape.mean_row_norm(pred.at(p), Denoiser::to_rows(pw.target.at(p))));
        tape.backward(tape.sum(terms));
        return tape.grad(bound[hands][0]);
    };
    const ad::Matrix both = hand_grad({kLeftHand, kRightHand});
    const ad::Matrix sum = hand_grad({kLeftHand}) + hand_grad({kRightHand});
    EXPECT_LT((both - sum).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(both.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Training, NoiseDrawIsSeeded) {
    const TrainConfig c = tiny_config();
    const DenoiserBank bank = build_bank(oracle::tiny_layout(), c.model_spec(), 1);
    const DatasetFile ds = tiny_dataset(1, 3, 8);
    const PreparedWindow pw =
        prepare_window(make_windows(ds.sequences[0], 3, 3)[0], bank, ds.image_width, ds.image_height, c.scale);
    const NoiseDraw a = draw_noise(pw, bank.frame_layout(), 100, 5), b = draw_noise(pw, bank.frame_layout(), 100, 5);
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.noise, b.noise);
    for (std::uint64_t s = 0; s < 200; ++s) {
        const int t = draw_noise(pw, bank.frame_layout(), 100, s).t;
        EXPECT_GE(t, 1);
        EXPECT_LE(t, 100);
    }
}

TEST(Training, BatchGradientIndependentOfThreads) {
    TrainConfig c = tiny_config();
    const DenoiserBank bank = randomized_bank(c, 9);
    const DatasetFile ds = tiny_dataset(2, 12, 10);
    std::vector<PreparedWindow> prepared;
    for (const auto& w : training_windows(ds, 3, 3))
        prepared.push_back(prepare_window(w, bank, ds.image_width, ds.image_height, c.scale));
    std::vector<const PreparedWindow*> batch;
    for (const auto& p : prepared) batch.push_back(&p);
    const NoiseSchedule s = cosine_schedule(100);
    const StepResult one = batch_gradient(bank, batch, s, c, 77);
    c.threads = 4;
    const StepResult four = batch_gradient(bank, batch, s, c, 77);
    EXPECT_EQ(one.loss, four.loss);
    EXPECT_EQ(one.grads, four.grads);
}

TEST(Training, DeterministicAcrossRunsAndThreads) {
    const DatasetFile ds = tiny_dataset(2, 15, 11);
    TrainConfig c = tiny_config();
    auto run = [&](std::size_t threads) {
        TrainConfig cc = c;
        cc.threads = threads;
        DenoiserBank bank = build_bank(ds.layout, cc.model_spec(), cc.seed);
        const auto log = train(bank, ds, cc);
        return std::make_pair(checkpoint_to_bytes(bank_to_checkpoint(bank, cc)), log.back().loss);
    };
    const auto a = run(1), b = run(1), d = run(3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
}

TEST(Training, ZeroEpochsKeepsInitialisation) {
    const DatasetFile ds = tiny_dataset(1, 6, 12);
    TrainConfig c = tiny_config();
    c.epochs = 0;
    DenoiserBank bank = build_bank(ds.layout, c.model_spec(), c.seed);
    const auto before = checkpoint_to_bytes(bank_to_checkpoint(bank, c));
    EXPECT_TRUE(train(bank, ds, c).empty());
    EXPECT_EQ(checkpoint_to_bytes(bank_to_checkpoint(bank, c)), before);
}

TEST(Training, LearningRateDecays) {
    const DatasetFile ds = tiny_dataset(1, 6, 12);
    TrainConfig c = tiny_config();
    c.epochs = 3;
    c.lr_decay = 0.5;
    DenoiserBank bank = build_bank(ds.layout, c.model_spec(), c.seed);
    std::vector<double> seen;
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e) { seen.push_back(e.learning_rate); };
    train(bank, ds, c, hooks);
    EXPECT_EQ(seen, (std::vector<double>{c.learning_rate, c.learning_rate * 0.5, c.learning_rate * 0.25}));
}

TEST(Training, NonFiniteLossIsNumericError) {
    const DatasetFile ds = tiny_dataset(1, 6, 13);
    TrainConfig c = tiny_config();
    DenoiserBank bank = build_bank(ds.layout, c.model_spec(), c.seed);
    bank.networks()[0].parameters()[0].value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(train(bank, ds, c), NumericError);
}

TEST(Training, LayoutMismatchIsDataError) {
    const DatasetFile ds = synth_generate(SynthConfig{1, 12});
    const TrainConfig c = tiny_config();
    DenoiserBank bank = build_bank(oracle::tiny_layout(), c.model_spec(), c.seed);
    EXPECT_THROW(train(bank, ds, c), DataError);
}

TEST(Training, LossDecreasesOnOneWindow) {
    const DatasetFile ds = tiny_dataset(1, 3, 14);
    TrainConfig c = tiny_config();
    c.learning_rate = 3e-3;
    c.lr_decay = 1.0;
    c.weight_decay = 0.0;
    DenoiserBank bank = build_bank(ds.layout, c.model_spec(), c.seed);
    std::vector<PreparedWindow> prepared{
        prepare_window(make_windows(ds.sequences[0], 3, 3)[0], bank, ds.image_width, ds.image_height, c.scale)};
    const std::vector<const PreparedWindow*> batch{&prepared[0]};
    const NoiseSchedule s = cosine_schedule(c.diffusion_steps);
    OptimizerState state = OptimizerState::for_bank(bank);
    const double first = train_step(bank, batch, s, c, state, c.learning_rate, 0);
    double last = 0;
    for (int i = 1; i <= 300; ++i) last = train_step(bank, batch, s, c, state, c.learning_rate, static_cast<std::uint64_t>(i));
    EXPECT_LT(last, 0.5 * first);
}

TEST(Evaluation, OracleGivesZeroError) {
    const DatasetFile ds = tiny_dataset(2, 9, 15);
    const SkeletonLayout& l = ds.layout;
    const oracle::LookupPredictor pred(ds, l, 3, 0.001);
    EvalOptions opt;
    opt.hypotheses = 3;
    opt.iterations = 2;
    const MetricsReport r = evaluate(pred, l, ds, 3, cosine_schedule(100), opt);
    EXPECT_EQ(r.windows, 6u);
    EXPECT_LT(r.p_best.wb, 1e-6);
    EXPECT_LT(r.p_agg.pb, 1e-6);
    const auto poses = infer(pred, l, ds, 3, cosine_schedule(100), opt);
    ASSERT_EQ(poses.size(), 6u);
    for (const auto& p : poses) {
        const auto& seq = p.sequence_id == "t0" ? ds.sequences[0] : ds.sequences[1];
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t j = 0; j < 12; ++j)
                for (std::size_t d = 0; d < 3; ++d) {
                    const auto& g = *seq.kp3d;
                    EXPECT_NEAR(p.kp3d(n, j, d), g(p.window_start + n, j, d) - g(p.window_start + n, 0, d), 1e-6);
                }
    }
}

TEST(Evaluation, SingleHypothesisRowsAgree) {
    const DatasetFile ds = tiny_dataset(1, 9, 16);
    const TrainConfig c = tiny_config();
    const DenoiserBank bank = randomized_bank(c, 17);
    EvalOptions opt;
    opt.hypotheses = 1;
    opt.iterations = 2;
    const MetricsReport r = evaluate(bank, ds, c, opt);
    EXPECT_EQ(r.p_best, r.p_agg);
    EXPECT_EQ(report_to_json(r).dump(), report_to_json(evaluate(bank, ds, c, opt)).dump());
    opt.threads = 3;
    EXPECT_EQ(report_to_json(r).dump(), report_to_json(evaluate(bank, ds, c, opt)).dump());
}

TEST(Evaluation, NeedsGroundTruth) {
    DatasetFile ds = tiny_dataset(1, 9, 18);
    ds.sequences[0].kp3d.reset();
    const TrainConfig c = tiny_config();
    const DenoiserBank bank = build_bank(ds.layout, c.model_spec(), 1);
    EvalOptions opt;
    opt.hypotheses = 1;
    opt.iterations = 1;
    EXPECT_THROW(evaluate(bank, ds, c, opt), DataError);
    EXPECT_EQ(infer(bank, bank.frame_layout(), ds, 3, cosine_schedule(100), opt).size(), 3u);
}

TEST(Export, JsonLinesRoundTrip) {
    std::mt19937_64 rng(19);
    std::vector<PoseExport> poses{{"a", 0, {0, 5, 10}, oracle::random_tensor(3, 133, 3, rng, 100.0)},
                                  {"b", 3, {15, 20, 25}, oracle::random_tensor(3, 133, 3, rng, 100.0)}};
    const std::string text = poses_to_jsonl(poses);
    const auto back = poses_from_jsonl(text);
    EXPECT_EQ(back, poses);
    EXPECT_EQ(poses_to_jsonl(back), text);
    EXPECT_THROW(poses_from_jsonl("{bad json\n"), DataError);
}

TEST(Baseline, MeanPoseMatchesDirectAverage) {
    const DatasetFile ds = tiny_dataset(2, 6, 20);
    const Tensor3 m = mean_pose(ds);
    for (std::size_t j = 0; j < 12; ++j) {
        double sum = 0;
        for (const auto& s : ds.sequences)
            for (std::size_t n = 0; n < 6; ++n) sum += (*s.kp3d)(n, j, 1) - (*s.kp3d)(n, 0, 1);
        EXPECT_NEAR(m(0, j, 1), sum / 12.0, 1e-9);
    }
    double total = 0;
    for (const auto& s : ds.sequences)
        for (std::size_t start = 0; start < 6; start += 3) {
            Tensor3 pred(3, 12, 3), gt(3, 12, 3);
            for (std::size_t n = 0; n < 3; ++n)
                for (std::size_t j = 0; j < 12; ++j)
                    for (std::size_t d = 0; d < 3; ++d) {
                        pred(n, j, d) = m(0, j, d);
                        gt(n, j, d) = (*s.kp3d)(start + n, j, d);
                    }
            total += oracle::metric_wb(pred, gt, ds.layout);
        }
    EXPECT_NEAR(constant_pose_wb(m, ds, 3, 3), total / 4.0, 1e-9);
}
