#include <gtest/gtest.h>

#include <functional>

#include "oracles.hpp"

using namespace pafuse;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

double evaluate(const Graph& f, const std::vector<Matrix>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    return tape.value(f(tape, vars))(0, 0);
}

/// Largest relative deviation between tape gradients and central differences.
double gradient_error(const Graph& f, std::vector<Matrix> inputs, double h = 1e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.parameter(m));
    tape.backward(f(tape, vars));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix g = tape.grad(vars[k]);
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k].data()[i];
            inputs[k].data()[i] = keep + h;
            const double up = evaluate(f, inputs);
            inputs[k].data()[i] = keep - h;
            const double down = evaluate(f, inputs);
            inputs[k].data()[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double a = g.data()[i];
            worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
        }
    }
    return worst;
}

// Random linear read-out so each op is checked against a full (non-symmetric) cotangent.
Var readout(Tape& t, Var x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix& v = t.value(x);
    const Matrix w = random_matrix(v.cols(), 1, rng);
    Var y = t.matmul(x, t.constant(w));
    return t.mean_squared(y, Matrix::Zero(v.rows(), 1));
}

}  // namespace

TEST(Autodiff, MatmulAddScale) {
    std::mt19937_64 rng(1);
    const Graph f = [](Tape& t, const std::vector<Var>& v) {
        return readout(t, t.scale(t.add(t.matmul(v[0], v[1]), v[2]), 0.7), 3);
    };
    EXPECT_LT(gradient_error(f, {random_matrix(4, 3, rng), random_matrix(3, 5, rng), random_matrix(4, 5, rng)}), 1e-6);
}

TEST(Autodiff, AddRowAndGather) {
    std::mt19937_64 rng(2);
    const Graph f = [](Tape& t, const std::vector<Var>& v) {
        Var x = t.add_row(v[0], v[1]);
        return readout(t, t.gather_rows(x, {3, 0, 0, 2, 1, 3}), 4);
    };
    EXPECT_LT(gradient_error(f, {random_matrix(4, 3, rng), random_matrix(1, 3, rng)}), 1e-6);
}

TEST(Autodiff, LayerNorm) {
    std::mt19937_64 rng(3);
    const Graph f = [](Tape& t, const std::vector<Var>& v) { return readout(t, t.layer_norm(v[0], v[1], v[2]), 5); };
    EXPECT_LT(gradient_error(f, {random_matrix(5, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng)}), 1e-5);
}

TEST(Autodiff, LayerNormForward) {
    Tape t;
    Matrix x(1, 4);
    x << 1, 2, 3, 4;
    const Var y = t.layer_norm(t.constant(x), t.constant(Matrix::Ones(1, 4)), t.constant(Matrix::Zero(1, 4)), 0.0);
    const double sd = std::sqrt(1.25);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(t.value(y)(0, i), (x(0, i) - 2.5) / sd, 1e-12);
}

TEST(Autodiff, Gelu) {
    std::mt19937_64 rng(4);
    const Graph f = [](Tape& t, const std::vector<Var>& v) { return readout(t, t.gelu(v[0]), 6); };
    EXPECT_LT(gradient_error(f, {random_matrix(6, 4, rng) * 2.0}), 1e-4);
    Tape t;
    Matrix x(1, 3);
    x << -1.0, 0.0, 2.0;
    const Matrix y = t.value(t.gelu(t.constant(x)));
    for (int i = 0; i < 3; ++i) {
        const double v = x(0, i);
        const double want = 0.5 * v * (1 + std::tanh(std::sqrt(2 / std::numbers::pi) * (v + 0.044715 * v * v * v)));
        EXPECT_NEAR(y(0, i), want, 1e-14);
    }
}

TEST(Autodiff, Attention) {
    std::mt19937_64 rng(5);
    for (const auto& groups : {ad::TokenGroups::per_frame(3, 4), ad::TokenGroups::per_joint(3, 4)}) {
        const Graph f = [groups](Tape& t, const std::vector<Var>& v) {
            return readout(t, t.attention(v[0], v[1], v[2], groups), 7);
        };
        EXPECT_LT(gradient_error(f, {random_matrix(12, 4, rng), random_matrix(12, 4, rng), random_matrix(12, 4, rng)}),
                  1e-5);
    }
}

TEST(Autodiff, AttentionForwardMatchesBruteForce) {
    std::mt19937_64 rng(6);
    const Matrix Q = random_matrix(6, 2, rng), K = random_matrix(6, 2, rng), V = random_matrix(6, 3, rng);
    const auto groups = ad::TokenGroups::per_joint(3, 2);  // tokens {0,2,4} and {1,3,5}
    Tape t;
    const Matrix out = t.value(t.attention(t.constant(Q), t.constant(K), t.constant(V), groups));
    for (int r = 0; r < 6; ++r) {
        std::vector<double> w;
        double z = 0;
        for (int c = r % 2; c < 6; c += 2) {
            w.push_back(std::exp(Q.row(r).dot(K.row(c)) / std::sqrt(2.0)));
            z += w.back();
        }
        for (int d = 0; d < 3; ++d) {
            double want = 0;
            int i = 0;
            for (int c = r % 2; c < 6; c += 2) want += w[i++] / z * V(c, d);
            EXPECT_NEAR(out(r, d), want, 1e-12);
        }
    }
}

TEST(Autodiff, Losses) {
    std::mt19937_64 rng(7);
    const Matrix target = random_matrix(5, 3, rng);
    const Graph l1 = [&](Tape& t, const std::vector<Var>& v) { return t.mean_row_norm(v[0], target); };
    const Graph l2 = [&](Tape& t, const std::vector<Var>& v) { return t.mean_squared(v[0], target); };
    EXPECT_LT(gradient_error(l1, {random_matrix(5, 3, rng)}), 1e-6);
    EXPECT_LT(gradient_error(l2, {random_matrix(5, 3, rng)}), 1e-6);
    Tape t;
    EXPECT_EQ(t.value(t.mean_row_norm(t.constant(target), target))(0, 0), 0.0);
}

TEST(Autodiff, SumAndReuse) {
    std::mt19937_64 rng(8);
    const Graph f = [](Tape& t, const std::vector<Var>& v) {
        Var a = t.matmul(v[0], v[0]);  // reused operand
        return t.sum({readout(t, a, 1), t.scale(readout(t, v[0], 2), 3.0)});
    };
    EXPECT_LT(gradient_error(f, {random_matrix(3, 3, rng)}), 1e-6);
}

TEST(Autodiff, ShapeMismatchThrows) {
    Tape t;
    const Var a = t.constant(Matrix::Zero(2, 3));
    const Var b = t.constant(Matrix::Zero(2, 3));
    EXPECT_THROW(t.matmul(a, b), ShapeError);
    EXPECT_THROW(t.mean_row_norm(a, Matrix::Zero(3, 3)), ShapeError);
    EXPECT_THROW(t.attention(a, a, a, ad::TokenGroups::per_frame(1, 3)), ShapeError);
}

TEST(Autodiff, ConstantsGetNoGradient) {
    Tape t;
    const Var c = t.constant(Matrix::Ones(2, 2));
    const Var p = t.parameter(Matrix::Ones(2, 2));
    t.backward(t.mean_squared(t.matmul(c, p), Matrix::Zero(2, 2)));
    EXPECT_EQ(t.grad(c), Matrix::Zero(2, 2));
    EXPECT_NE(t.grad(p), Matrix::Zero(2, 2));
}
