#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace pafuse;

namespace {

Denoiser tiny_denoiser(std::size_t joints, std::size_t frames, std::size_t C, std::size_t depth, std::uint64_t seed) {
    return build_denoiser({"body", joints, frames, C, depth}, seed);
}

}  // namespace

TEST(Denoiser, ParameterCountMatchesArchitectureWalk) {
    for (std::size_t C : {4, 8, 28, 48}) {
        for (std::size_t L : {1, 2, 3}) {
            for (auto [J, N] : {std::pair<std::size_t, std::size_t>{23, 9}, {68, 27}, {21, 1}}) {
                const DenoiserConfig c{"x", J, N, C, L};
                EXPECT_EQ(count_parameters(c), oracle::walk_parameters(J, N, C, L));
                EXPECT_EQ(count_parameters(c), 16 * L * C * C + (11 + 22 * L + N + J) * C + 3);
            }
        }
    }
    const Denoiser d = tiny_denoiser(5, 3, 8, 2, 1);
    EXPECT_EQ(count_parameters(d), count_parameters(d.config()));
}

TEST(Denoiser, ConfigValidation) {
    EXPECT_THROW(build_denoiser({"x", 5, 3, 7, 1}, 0), ConfigError);
    EXPECT_THROW(build_denoiser({"x", 5, 3, 2, 1}, 0), ConfigError);
    EXPECT_THROW(build_denoiser({"x", 0, 3, 8, 1}, 0), ConfigError);
    EXPECT_THROW(build_denoiser({"x", 5, 3, 8, 0}, 0), ConfigError);
}

TEST(Denoiser, ZeroHeadAtInitialisation) {
    std::mt19937_64 rng(1);
    const Denoiser d = tiny_denoiser(5, 3, 8, 1, 2);
    const Tensor3 out = d.predict(10, oracle::random_tensor(3, 5, 2, rng), oracle::random_tensor(3, 5, 3, rng));
    for (double v : out.values) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, SeededInitialisation) {
    const Denoiser a = tiny_denoiser(5, 3, 8, 1, 7), b = tiny_denoiser(5, 3, 8, 1, 7), c = tiny_denoiser(5, 3, 8, 1, 8);
    for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
    EXPECT_NE(a.parameters()[0].value, c.parameters()[0].value);
}

TEST(Denoiser, ShapeErrors) {
    const Denoiser d = tiny_denoiser(5, 3, 8, 1, 2);
    EXPECT_THROW(d.predict(1, Tensor3(3, 4, 2), Tensor3(3, 4, 3)), ShapeError);
    EXPECT_THROW(d.predict(1, Tensor3(3, 5, 2), Tensor3(2, 5, 3)), ShapeError);
    EXPECT_THROW(Denoiser(d.config(), {}), ConfigError);
}

TEST(Denoiser, FramePermutationEquivariance) {
    // Without the frame positional table the network cannot tell frames apart.
    std::mt19937_64 rng(3);
    Denoiser d = tiny_denoiser(4, 5, 8, 2, 4);
    oracle::randomize_zero_arrays(d, rng);
    for (auto& p : d.parameters())
        if (p.name == "pos.frame") p.value.setZero();
    const Tensor3 x = oracle::random_tensor(5, 4, 2, rng), y = oracle::random_tensor(5, 4, 3, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    auto permute = [&](const Tensor3& t) {
        Tensor3 o(t.frames, t.joints, t.dims);
        for (std::size_t n = 0; n < t.frames; ++n)
            for (std::size_t j = 0; j < t.joints; ++j)
                for (std::size_t k = 0; k < t.dims; ++k) o(n, j, k) = t(perm[n], j, k);
        return o;
    };
    const Tensor3 out = d.predict(50, x, y);
    const Tensor3 out_p = d.predict(50, permute(x), permute(y));
    const Tensor3 want = permute(out);
    double worst = 0;
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(out_p.values[i] - want.values[i]));
    EXPECT_LT(worst, 1e-12);
    // With the table the symmetry is broken.
    for (auto& p : d.parameters())
        if (p.name == "pos.frame") p.value.setRandom();
    EXPECT_NE(d.predict(50, permute(x), permute(y)), permute(d.predict(50, x, y)));
}

TEST(Denoiser, TimestepChangesOutput) {
    std::mt19937_64 rng(5);
    Denoiser d = tiny_denoiser(4, 3, 8, 1, 6);
    oracle::randomize_zero_arrays(d, rng);
    const Tensor3 x = oracle::random_tensor(3, 4, 2, rng), y = oracle::random_tensor(3, 4, 3, rng);
    EXPECT_NE(d.predict(10, x, y), d.predict(900, x, y));
    EXPECT_EQ(d.predict(10, x, y), d.predict(10, x, y));
}

TEST(Denoiser, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(7);
    Denoiser d = tiny_denoiser(3, 2, 4, 1, 8);
    oracle::randomize_zero_arrays(d, rng);
    const SkeletonLayout layout(3, {{kBody, {0, 1, 2}, 0}});
    std::vector<Denoiser> nets{d};
    const DenoiserBank bank(layout, ModelVariant::parse("full"), std::move(nets));
    const Tensor3 x = oracle::random_tensor(2, 3, 2, rng), y = oracle::random_tensor(2, 3, 3, rng);
    const ad::Matrix target = Denoiser::to_rows(oracle::random_tensor(2, 3, 3, rng));
    const oracle::BankLoss loss = [&](ad::Tape& t, const DenoiserBank& b, const std::vector<Denoiser::Bound>& w) {
        const Denoiser& n = b.networks()[0];
        return t.mean_row_norm(n.forward(t, w[0], 123, n.pack_input(x, y)), target);
    };
    const auto r = oracle::check_bank_gradients(bank, loss);
    EXPECT_EQ(r.checked, count_parameters(d));
    EXPECT_LT(r.worst, 1e-4);
}

TEST(Allocator, HitsBudgetsWithOrderedWidths) {
    const std::vector<NetworkShape> nets = {{23, 9}, {21, 9}, {68, 9}};
    const std::vector<double> ratios = {384, 256, 224};
    for (std::size_t target : {60000, 150000, 400000}) {
        const auto w = allocate_channels(target, nets, 2, ratios);
        std::size_t total = count_parameters(DenoiserConfig{"", 23, 9, w[0], 2}) +
                            count_parameters(DenoiserConfig{"", 21, 9, w[1], 2}) +
                            count_parameters(DenoiserConfig{"", 68, 9, w[2], 2});
        EXPECT_LE(std::abs(static_cast<double>(total) - static_cast<double>(target)), 0.03 * static_cast<double>(target))
            << target;
        EXPECT_GT(w[0], w[1]);
        EXPECT_GT(w[1], w[2]);
        for (auto c : w) EXPECT_EQ(c % 2, 0u);
    }
}

TEST(Allocator, Infeasible) {
    EXPECT_THROW(allocate_channels(10, {{23, 9}}, 2, {1.0}), ConfigError);
    EXPECT_THROW(allocate_channels(10000, {{23, 9}}, 2, {1.0, 2.0}), ConfigError);
}

TEST(Bank, RoutesPerVariant) {
    const SkeletonLayout l = default_layout();
    const auto full = make_routes(l, ModelVariant::parse("full"));
    ASSERT_EQ(full.size(), 4u);
    EXPECT_EQ(full[2].network, kHandsNetwork);
    EXPECT_EQ(full[3].network, kHandsNetwork);
    const auto nets = network_joints(l, full);
    ASSERT_EQ(nets.size(), 3u);
    EXPECT_EQ(nets[0], (std::pair<std::string, std::size_t>{kBody, 23}));
    EXPECT_EQ(nets[1], (std::pair<std::string, std::size_t>{kFace, 68}));
    EXPECT_EQ(nets[2], (std::pair<std::string, std::size_t>{kHandsNetwork, 21}));
    const auto mono = make_routes(l, ModelVariant::parse("monolithic"));
    ASSERT_EQ(mono.size(), 1u);
    EXPECT_EQ(network_joints(l, mono)[0].second, 133u);
    EXPECT_THROW(ModelVariant::parse("nope"), ConfigError);
}

TEST(Bank, FrameLayoutPerVariant) {
    const SkeletonLayout l = default_layout();
    ModelSpec spec;
    spec.variant = ModelVariant::parse("parts_only");
    const auto parts_only = build_bank(l, spec, 1);
    for (const auto& p : parts_only.frame_layout().parts()) EXPECT_EQ(p.root, 0u);
    spec.variant = ModelVariant::parse("shift_only");
    const auto shift_only = build_bank(l, spec, 1);
    EXPECT_EQ(shift_only.frame_layout(), l);
    EXPECT_EQ(shift_only.networks().size(), 1u);
    EXPECT_TRUE(shift_only.variant().balanced_loss);
}

TEST(Bank, DefaultWidthsAndCounts) {
    const auto bank = build_bank(default_layout(), ModelSpec{}, 3);
    ASSERT_EQ(bank.networks().size(), 3u);
    std::size_t sum = 0;
    for (const auto& n : bank.networks()) sum += oracle::walk_parameters(n.config().joints, 9, n.config().channels, 2);
    EXPECT_EQ(bank.parameter_count(), sum);
    EXPECT_GT(bank.network(kBody).config().channels, bank.network(kHandsNetwork).config().channels);
    EXPECT_GT(bank.network(kHandsNetwork).config().channels, bank.network(kFace).config().channels);
}

TEST(Bank, PredictMatchesPerNetworkCalls) {
    std::mt19937_64 rng(9);
    const SkeletonLayout l = oracle::tiny_layout();
    ModelSpec spec{ModelVariant::parse("full"), 3, 1, {{kBody, 8}, {kFace, 6}, {kHandsNetwork, 4}}};
    DenoiserBank bank = build_bank(l, spec, 2);
    for (auto& n : bank.networks()) oracle::randomize_zero_arrays(n, rng);
    const PartTensors x = split_part_tensors(oracle::random_tensor(3, 12, 2, rng), l);
    const PartTensors y = split_part_tensors(oracle::random_tensor(3, 12, 3, rng), l);
    const PartTensors out = bank.predict(77, x, y);
    EXPECT_EQ(out.at(kLeftHand), bank.network(kHandsNetwork).predict(77, x.at(kLeftHand), y.at(kLeftHand)));
    EXPECT_EQ(out.at(kRightHand), bank.network(kHandsNetwork).predict(77, x.at(kRightHand), y.at(kRightHand)));
    EXPECT_EQ(out.at(kFace), bank.network(kFace).predict(77, x.at(kFace), y.at(kFace)));
}

TEST(Bank, MatchedWidthsForAblations) {
    const SkeletonLayout l = default_layout();
    const std::size_t target = build_bank(l, ModelSpec{}, 0).parameter_count();
    for (const char* v : {"full", "shift_only", "parts_only", "monolithic"}) {
        const ModelVariant variant = ModelVariant::parse(v);
        ModelSpec spec{variant, 9, 2, matched_widths(l, variant, 9, 2, target)};
        const auto bank = build_bank(l, spec, 0);
        EXPECT_NEAR(static_cast<double>(bank.parameter_count()), static_cast<double>(target), 0.03 * target) << v;
    }
}
