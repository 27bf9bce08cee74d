#pragma once

// Minimal tensor-level reverse-mode differentiation. A Tape records matrix-valued
// nodes in evaluation order; backward() replays their adjoints in reverse.

#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "pafuse/common.hpp"

namespace pafuse::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
    std::size_t id = 0;
};

/// Rows of a token matrix partitioned into equal-size groups; index[g * size + s] is the
/// row of the s-th member of group g. Attention mixes tokens within a group only.
struct TokenGroups {
    std::size_t count = 0;
    std::size_t size = 0;
    std::vector<std::size_t> index;

    /// Tokens laid out frame-major (row = frame * joints + joint).
    static TokenGroups per_frame(std::size_t frames, std::size_t joints) {
        TokenGroups g{frames, joints, std::vector<std::size_t>(frames * joints)};
        for (std::size_t n = 0; n < frames; ++n)
            for (std::size_t j = 0; j < joints; ++j) g.index[n * joints + j] = n * joints + j;
        return g;
    }
    static TokenGroups per_joint(std::size_t frames, std::size_t joints) {
        TokenGroups g{joints, frames, std::vector<std::size_t>(frames * joints)};
        for (std::size_t j = 0; j < joints; ++j)
            for (std::size_t n = 0; n < frames; ++n) g.index[j * frames + n] = n * joints + j;
        return g;
    }
};

class Tape {
public:
    Tape() { nodes_.reserve(256); }

    Var constant(Matrix value) { return push(std::move(value), false, {}); }
    Var parameter(Matrix value) { return push(std::move(value), true, {}); }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }

    /// Gradient of the last backward() target; zeros when the node was not reached.
    Matrix grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void backward(Var out, double seed = 1.0) {
        for (auto& n : nodes_) n.grad.resize(0, 0);
        Node& root = nodes_[out.id];
        root.grad = Matrix::Constant(root.value.rows(), root.value.cols(), seed);
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

    Var matmul(Var a, Var b) {
        check(value(a).cols() == value(b).rows(), "matmul: inner dimensions differ");
        Matrix out = value(a) * value(b);
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
            if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
            if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
        });
    }

    Var add(Var a, Var b) {
        check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
              "add: shape mismatch");
        Matrix out = value(a) + value(b);
        return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
            if (t.needs(a)) t.accumulate(a, g);
            if (t.needs(b)) t.accumulate(b, g);
        });
    }

    /// a + row broadcast over every row of a.
    Var add_row(Var a, Var row) {
        check(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row: shape mismatch");
        Matrix out = value(a).rowwise() + value(row).row(0);
        return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Matrix& g) {
            if (t.needs(a)) t.accumulate(a, g);
            if (t.needs(row)) t.accumulate(row, g.colwise().sum());
        });
    }

    /// out.row(i) = a.row(index[i]).
    Var gather_rows(Var a, std::vector<std::size_t> index) {
        const Matrix& src = value(a);
        Matrix out(static_cast<Eigen::Index>(index.size()), src.cols());
        for (std::size_t i = 0; i < index.size(); ++i) {
            check(index[i] < static_cast<std::size_t>(src.rows()), "gather_rows: index out of range");
            out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(index[i]));
        }
        return push(std::move(out), needs(a),
                    [a, index = std::move(index)](Tape& t, const Matrix& g) {
                        Matrix da = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
                        for (std::size_t i = 0; i < index.size(); ++i) {
                            da.row(static_cast<Eigen::Index>(index[i])) += g.row(static_cast<Eigen::Index>(i));
                        }
                        t.accumulate(a, da);
                    });
    }

    Var scale(Var a, double c) {
        Matrix out = value(a) * c;
        return push(std::move(out), needs(a), [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
    }

    /// Sum of 1x1 scalars.
    Var sum(const std::vector<Var>& xs) {
        check(!xs.empty(), "sum: no operands");
        double total = 0.0;
        bool any = false;
        for (Var x : xs) {
            check(value(x).size() == 1, "sum: operands must be scalars");
            total += value(x)(0, 0);
            any = any || needs(x);
        }
        return push(Matrix::Constant(1, 1, total), any, [xs](Tape& t, const Matrix& g) {
            for (Var x : xs)
                if (t.needs(x)) t.accumulate(x, g);
        });
    }

    /// Row-wise layer normalization with learned gain and bias (1 x C each).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
        const Matrix& in = value(x);
        const auto cols = in.cols();
        auto normalized = std::make_shared<Matrix>(in.rows(), cols);
        auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(in.rows()));
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
            const double mean = in.row(r).mean();
            const double var = (in.row(r).array() - mean).square().mean();
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<std::size_t>(r)] = is;
            normalized->row(r) = (in.row(r).array() - mean) * is;
        }
        Matrix out = (normalized->array().rowwise() * value(gain).row(0).array()).matrix();
        out.rowwise() += value(bias).row(0);
        return push(std::move(out), needs(x) || needs(gain) || needs(bias),
                    [x, gain, bias, normalized, inv_std](Tape& t, const Matrix& g) {
                        const Matrix& xh = *normalized;
                        if (t.needs(gain)) t.accumulate(gain, (g.array() * xh.array()).colwise().sum().matrix());
                        if (t.needs(bias)) t.accumulate(bias, g.colwise().sum());
                        if (!t.needs(x)) return;
                        Matrix dxh = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
                        Matrix dx(xh.rows(), xh.cols());
                        for (Eigen::Index r = 0; r < xh.rows(); ++r) {
                            const double m1 = dxh.row(r).mean();
                            const double m2 = (dxh.row(r).array() * xh.row(r).array()).mean();
                            dx.row(r) = ((*inv_std)[static_cast<std::size_t>(r)] *
                                         (dxh.row(r).array() - m1 - xh.row(r).array() * m2))
                                            .matrix();
                        }
                        t.accumulate(x, dx);
                    });
    }

    /// Tanh-approximated GELU (smooth everywhere).
    Var gelu(Var x) {
        constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
        constexpr double k = 0.044715;
        const Matrix& in = value(x);
        // 0.5 * (1 + tanh(u)) == 1 / (1 + exp(-2u)); Eigen vectorizes exp but not tanh.
        const auto u = c * (in.array() + k * in.array().cube());
        const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> half = (1.0 + (-2.0 * u).exp()).inverse();
        auto th = std::make_shared<Matrix>((2.0 * half - 1.0).matrix());
        Matrix out = (in.array() * half).matrix();
        return push(std::move(out), needs(x), [x, th](Tape& t, const Matrix& g) {
            const Matrix& in = t.value(x);
            Matrix dx(in.rows(), in.cols());
            for (Eigen::Index i = 0; i < in.size(); ++i) {
                const double v = in.data()[i];
                const double tv = th->data()[i];
                const double d = 0.5 * (1.0 + tv) + 0.5 * v * (1.0 - tv * tv) * c * (1.0 + 3.0 * k * v * v);
                dx.data()[i] = g.data()[i] * d;
            }
            t.accumulate(x, dx);
        });
    }

    /// Single-head scaled dot-product attention restricted to token groups.
    Var attention(Var q, Var k, Var v, const TokenGroups& groups) {
        const Matrix& Q = value(q);
        const Matrix& K = value(k);
        const Matrix& V = value(v);
        check(Q.rows() == K.rows() && K.rows() == V.rows() && Q.cols() == K.cols(),
              "attention: shape mismatch");
        check(groups.count * groups.size == static_cast<std::size_t>(Q.rows()),
              "attention: groups do not cover the tokens");
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
        const auto S = static_cast<Eigen::Index>(groups.size);
        auto probs = std::make_shared<std::vector<Matrix>>(groups.count);
        Matrix out(Q.rows(), V.cols());
        Matrix qg(S, Q.cols()), kg(S, K.cols()), vg(S, V.cols());
        for (std::size_t gi = 0; gi < groups.count; ++gi) {
            const std::size_t* idx = &groups.index[gi * groups.size];
            for (Eigen::Index s = 0; s < S; ++s) {
                const auto r = static_cast<Eigen::Index>(idx[s]);
                qg.row(s) = Q.row(r);
                kg.row(s) = K.row(r);
                vg.row(s) = V.row(r);
            }
            Matrix p = (qg * kg.transpose()) * inv_sqrt;
            for (Eigen::Index s = 0; s < S; ++s) {
                const double m = p.row(s).maxCoeff();
                p.row(s) = (p.row(s).array() - m).exp().matrix();
                p.row(s) /= p.row(s).sum();
            }
            Matrix og = p * vg;
            for (Eigen::Index s = 0; s < S; ++s) out.row(static_cast<Eigen::Index>(idx[s])) = og.row(s);
            (*probs)[gi] = std::move(p);
        }
        return push(std::move(out), needs(q) || needs(k) || needs(v),
                    [q, k, v, groups, probs, inv_sqrt](Tape& t, const Matrix& g) {
                        const Matrix& Q = t.value(q);
                        const Matrix& K = t.value(k);
                        const Matrix& V = t.value(v);
                        Matrix dQ = Matrix::Zero(Q.rows(), Q.cols());
                        Matrix dK = Matrix::Zero(K.rows(), K.cols());
                        Matrix dV = Matrix::Zero(V.rows(), V.cols());
                        const auto S = static_cast<Eigen::Index>(groups.size);
                        Matrix qg(S, Q.cols()), kg(S, K.cols()), vg(S, V.cols()), gg(S, g.cols());
                        for (std::size_t gi = 0; gi < groups.count; ++gi) {
                            const std::size_t* idx = &groups.index[gi * groups.size];
                            for (Eigen::Index s = 0; s < S; ++s) {
                                const auto r = static_cast<Eigen::Index>(idx[s]);
                                qg.row(s) = Q.row(r);
                                kg.row(s) = K.row(r);
                                vg.row(s) = V.row(r);
                                gg.row(s) = g.row(r);
                            }
                            const Matrix& p = (*probs)[gi];
                            Matrix dp = gg * vg.transpose();
                            Matrix dvg = p.transpose() * gg;
                            Matrix ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
                            ds *= inv_sqrt;
                            Matrix dqg = ds * kg;
                            Matrix dkg = ds.transpose() * qg;
                            for (Eigen::Index s = 0; s < S; ++s) {
                                const auto r = static_cast<Eigen::Index>(idx[s]);
                                dQ.row(r) += dqg.row(s);
                                dK.row(r) += dkg.row(s);
                                dV.row(r) += dvg.row(s);
                            }
                        }
                        if (t.needs(q)) t.accumulate(q, dQ);
                        if (t.needs(k)) t.accumulate(k, dK);
                        if (t.needs(v)) t.accumulate(v, dV);
                    });
    }

    /// Mean over rows of the Euclidean norm of (pred - target). Zero-length rows get zero gradient.
    Var mean_row_norm(Var pred, const Matrix& target) {
        const Matrix& p = value(pred);
        check(p.rows() == target.rows() && p.cols() == target.cols(), "mean_row_norm: shape mismatch");
        auto diff = std::make_shared<Matrix>(p - target);
        auto norms = std::make_shared<Eigen::VectorXd>(diff->rowwise().norm());
        const double loss = norms->sum() / static_cast<double>(p.rows());
        return push(Matrix::Constant(1, 1, loss), needs(pred), [pred, diff, norms](Tape& t, const Matrix& g) {
            const double scale = g(0, 0) / static_cast<double>(diff->rows());
            Matrix d(diff->rows(), diff->cols());
            for (Eigen::Index r = 0; r < d.rows(); ++r) {
                const double n = (*norms)(r);
                if (n > 0.0) {
                    d.row(r) = diff->row(r) * (scale / n);
                } else {
                    d.row(r).setZero();
                }
            }
            t.accumulate(pred, d);
        });
    }

    /// Mean over all entries of (pred - target)^2.
    Var mean_squared(Var pred, const Matrix& target) {
        const Matrix& p = value(pred);
        check(p.rows() == target.rows() && p.cols() == target.cols(), "mean_squared: shape mismatch");
        auto diff = std::make_shared<Matrix>(p - target);
        const double loss = diff->squaredNorm() / static_cast<double>(p.size());
        return push(Matrix::Constant(1, 1, loss), needs(pred), [pred, diff](Tape& t, const Matrix& g) {
            t.accumulate(pred, *diff * (2.0 * g(0, 0) / static_cast<double>(diff->size())));
        });
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    using Backward = std::function<void(Tape&, const Matrix&)>;

    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
    };

    static void check(bool ok, const char* what) {
        if (!ok) throw ShapeError(std::string("autodiff: ") + what);
    }

    bool needs(Var v) const { return nodes_[v.id].needs_grad; }

    void accumulate(Var v, const Matrix& g) {
        Node& n = nodes_[v.id];
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    Var push(Matrix value, bool needs_grad, Backward backward) {
        nodes_.push_back({std::move(value), Matrix(), needs_grad, needs_grad ? std::move(backward) : Backward{}});
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace pafuse::ad
