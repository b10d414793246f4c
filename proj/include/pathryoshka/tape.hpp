#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "pathryoshka/common.hpp"

namespace pathryoshka {

template <class S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecS = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatF = MatR<float>;
using MatD = MatR<double>;

// Reverse-mode tape over dense row-major matrices. Nodes are indices; a fresh
// tape is built per training step and discarded. Scalar is float in training,
// double in finite-difference gradient checks.
template <class S>
class Tape {
public:
    using Mat = MatR<S>;

    struct Node {
        Mat val;
        Mat grad;  // allocated lazily; empty means zero
        bool needs = false;
        std::function<void(Tape&)> back;  // null for leaves
    };

    int leaf(Mat v, bool requires_grad = false) {
        Node n;
        n.val = std::move(v);
        n.needs = requires_grad;
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    const Mat& val(int id) const { return nodes_[std::size_t(id)].val; }
    bool needs(int id) const { return nodes_[std::size_t(id)].needs; }
    std::size_t size() const { return nodes_.size(); }

    // Zero-filled gradient buffer; callers accumulate with +=.
    Mat& gbuf(int id) {
        Node& n = nodes_[std::size_t(id)];
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        return n.grad;
    }

    // Gradient of a leaf after backward(); zero matrix if untouched.
    Mat grad_of(int id) const {
        const Node& n = nodes_[std::size_t(id)];
        if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
        return n.grad;
    }

    S scalar_val(int id) const {
        check(val(id).size() == 1, Errc::ShapeError, "node is not scalar");
        return val(id)(0, 0);
    }

    // ---- ops ----

    int matmul(int a, int b) {
        const Mat& A = val(a);
        const Mat& B = val(b);
        check(A.cols() == B.rows(), Errc::ShapeError, "matmul inner dims");
        Mat out(A.rows(), B.cols());
        out.noalias() = A * B;
        return make(std::move(out), {a, b}, [a, b](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a).noalias() += g * t.val(b).transpose();
            if (t.needs(b)) t.gbuf(b).noalias() += t.val(a).transpose() * g;
        });
    }

    // Fused a*w + bias (bias 1 x C broadcast over rows). One output buffer,
    // no intermediate copy of the product.
    int linear(int a, int w, int bias) {
        const Mat& A = val(a);
        const Mat& W = val(w);
        check(A.cols() == W.rows(), Errc::ShapeError, "linear inner dims");
        check(val(bias).rows() == 1 && val(bias).cols() == W.cols(), Errc::ShapeError, "linear bias dims");
        Mat out(A.rows(), W.cols());
        out.noalias() = A * W;
        out.rowwise() += val(bias).row(0);
        return make(std::move(out), {a, w, bias}, [a, w, bias](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a).noalias() += g * t.val(w).transpose();
            if (t.needs(w)) t.gbuf(w).noalias() += t.val(a).transpose() * g;
            if (t.needs(bias)) t.gbuf(bias) += g.colwise().sum();
        });
    }

    int add(int a, int b) {
        check(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(), Errc::ShapeError, "add dims");
        Mat out = val(a) + val(b);
        return make(std::move(out), {a, b}, [a, b](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a) += g;
            if (t.needs(b)) t.gbuf(b) += g;
        });
    }

    // bias: 1 x C broadcast over rows of a
    int add_rowvec(int a, int bias) {
        check(val(bias).rows() == 1 && val(bias).cols() == val(a).cols(), Errc::ShapeError, "bias dims");
        Mat out = val(a);
        out.rowwise() += val(bias).row(0);
        return make(std::move(out), {a, bias}, [a, bias](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a) += g;
            if (t.needs(bias)) t.gbuf(bias) += g.colwise().sum();
        });
    }

    int scale(int a, S k) {
        Mat out = val(a) * k;
        return make(std::move(out), {a}, [a, k](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a) += g * k;
        });
    }

    int slice_rows(int a, int r0, int n) {
        check(r0 >= 0 && n >= 0 && r0 + n <= val(a).rows(), Errc::ShapeError, "slice_rows bounds");
        Mat out = val(a).middleRows(r0, n);
        return make(std::move(out), {a}, [a, r0, n](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a).middleRows(r0, n) += g;
        });
    }

    int slice_cols(int a, int c0, int n) {
        check(c0 >= 0 && n >= 1 && c0 + n <= val(a).cols(), Errc::ShapeError, "slice_cols bounds");
        Mat out = val(a).middleCols(c0, n);
        return make(std::move(out), {a}, [a, c0, n](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a).middleCols(c0, n) += g;
        });
    }

    // rows [r0, r0+n) of every consecutive `period`-row block
    int gather_rows_mod(int a, int period, int r0, int n) {
        const Mat& A = val(a);
        check(period > 0 && A.rows() % period == 0, Errc::ShapeError, "gather period");
        check(r0 >= 0 && n >= 0 && r0 + n <= period, Errc::ShapeError, "gather range");
        const int blocks = int(A.rows()) / period;
        Mat out(std::int64_t(blocks) * n, A.cols());
        for (int b = 0; b < blocks; ++b) out.middleRows(std::int64_t(b) * n, n) = A.middleRows(std::int64_t(b) * period + r0, n);
        return make(std::move(out), {a}, [a, period, r0, n, blocks](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (!t.needs(a)) return;
            Mat& ga = t.gbuf(a);
            for (int b = 0; b < blocks; ++b)
                ga.middleRows(std::int64_t(b) * period + r0, n) += g.middleRows(std::int64_t(b) * n, n);
        });
    }

    // a: (B*P) x d plus pos: P x d added per block
    int add_pos_broadcast(int a, int pos, int batch) {
        const Mat& A = val(a);
        const Mat& P = val(pos);
        check(A.rows() == std::int64_t(batch) * P.rows() && A.cols() == P.cols(), Errc::ShapeError,
              "pos broadcast dims");
        Mat out = A;
        const int p = int(P.rows());
        for (int b = 0; b < batch; ++b) out.middleRows(std::int64_t(b) * p, p) += P;
        return make(std::move(out), {a, pos}, [a, pos, batch, p](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(a)) t.gbuf(a) += g;
            if (t.needs(pos)) {
                Mat& gp = t.gbuf(pos);
                for (int b = 0; b < batch; ++b) gp += g.middleRows(std::int64_t(b) * p, p);
            }
        });
    }

    // Per image block: [cls; registers; patches(image)]. reg = -1 when absent.
    int interleave_tokens(int cls, int reg, int patches, int batch, int grid_sq) {
        const Mat& C = val(cls);
        const Mat& P = val(patches);
        const int R = reg >= 0 ? int(val(reg).rows()) : 0;
        check(C.rows() == 1 && C.cols() == P.cols(), Errc::ShapeError, "cls dims");
        check(P.rows() == std::int64_t(batch) * grid_sq, Errc::ShapeError, "patch rows");
        const int T = 1 + R + grid_sq;
        Mat out(std::int64_t(batch) * T, P.cols());
        for (int b = 0; b < batch; ++b) {
            out.row(std::int64_t(b) * T) = C.row(0);
            if (R > 0) out.middleRows(std::int64_t(b) * T + 1, R) = val(reg);
            out.middleRows(std::int64_t(b) * T + 1 + R, grid_sq) = P.middleRows(std::int64_t(b) * grid_sq, grid_sq);
        }
        return make(std::move(out), {cls, patches, reg}, [cls, reg, patches, batch, grid_sq, R, T](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            for (int b = 0; b < batch; ++b) {
                if (t.needs(cls)) t.gbuf(cls).row(0) += g.row(std::int64_t(b) * T);
                if (R > 0 && t.needs(reg)) t.gbuf(reg) += g.middleRows(std::int64_t(b) * T + 1, R);
                if (t.needs(patches))
                    t.gbuf(patches).middleRows(std::int64_t(b) * grid_sq, grid_sq) +=
                        g.middleRows(std::int64_t(b) * T + 1 + R, grid_sq);
            }
        });
    }

    int gelu(int a) {
        const Mat& X = val(a);
        const S c = S(0.7978845608028654);  // sqrt(2/pi)
        const S k = S(0.044715);
        auto saved = std::make_shared<Mat>((c * (X.array() + k * X.array().cube())).tanh().matrix());
        Mat out = (S(0.5) * X.array() * (S(1) + saved->array())).matrix();
        return make(std::move(out), {a}, [a, saved, c, k](Tape& t) {
            if (!t.needs(a)) return;
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            const auto x = t.val(a).array();
            const auto tt = saved->array();
            auto d = S(0.5) * (S(1) + tt) + S(0.5) * x * (S(1) - tt.square()) * c * (S(1) + S(3) * k * x.square());
            t.gbuf(a).array() += g.array() * d;
        });
    }

    int silu(int a) {
        const Mat& X = val(a);
        auto sig = (S(1) / (S(1) + (-X.array()).exp())).eval();
        auto saved = std::make_shared<Mat>(sig.matrix());
        Mat out = (X.array() * sig).matrix();
        return make(std::move(out), {a}, [a, saved](Tape& t) {
            if (!t.needs(a)) return;
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            const auto x = t.val(a).array();
            const auto s = saved->array();
            t.gbuf(a).array() += g.array() * (s * (S(1) + x * (S(1) - s)));
        });
    }

    // Row-wise layer norm with affine params gamma/beta (1 x d).
    int layernorm(int a, int gamma, int beta, S eps) {
        const Mat& X = val(a);
        const auto d = S(X.cols());
        check(val(gamma).rows() == 1 && val(gamma).cols() == X.cols(), Errc::ShapeError, "gamma dims");
        check(val(beta).rows() == 1 && val(beta).cols() == X.cols(), Errc::ShapeError, "beta dims");
        VecS<S> mu = X.rowwise().mean();
        auto xhat = std::make_shared<Mat>(X.colwise() - mu);
        VecS<S> inv = (xhat->array().square().rowwise().sum() / d + eps).rsqrt().matrix();
        xhat->array().colwise() *= inv.array();
        auto inv_saved = std::make_shared<VecS<S>>(std::move(inv));
        Mat out = (xhat->array().rowwise() * val(gamma).row(0).array()).matrix();
        out.rowwise() += val(beta).row(0);
        return make(std::move(out), {a, gamma, beta}, [a, gamma, beta, xhat, inv_saved, d](Tape& t) {
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            if (t.needs(gamma)) t.gbuf(gamma) += (g.array() * xhat->array()).colwise().sum().matrix();
            if (t.needs(beta)) t.gbuf(beta) += g.colwise().sum();
            if (!t.needs(a)) return;
            Mat dxh = (g.array().rowwise() * t.val(gamma).row(0).array()).matrix();
            VecS<S> m1 = dxh.rowwise().mean();
            VecS<S> m2 = ((dxh.array() * xhat->array()).rowwise().sum() / d).matrix();
            Mat dx = ((dxh.colwise() - m1).array() - (xhat->array().colwise() * m2.array())).matrix();
            t.gbuf(a).array() += dx.array().colwise() * inv_saved->array();
        });
    }

    // Fused multi-head self-attention. qkv: (batch*seq) x 3d laid out [Q|K|V].
    int attention(int qkv, int batch, int seq, int heads) {
        const Mat& QKV = val(qkv);
        check(QKV.cols() % 3 == 0, Errc::ShapeError, "qkv cols");
        const int d = int(QKV.cols()) / 3;
        check(d % heads == 0, Errc::ShapeError, "width not divisible by heads");
        check(QKV.rows() == std::int64_t(batch) * seq, Errc::ShapeError, "qkv rows");
        const int dh = d / heads;
        const S alpha = S(1) / std::sqrt(S(dh));

        auto probs = std::make_shared<std::vector<Mat>>();
        probs->reserve(std::size_t(batch) * heads);
        Mat out(QKV.rows(), d);
        VecS<S> mx(seq), sum(seq);
        for (int b = 0; b < batch; ++b) {
            const std::int64_t row0 = std::int64_t(b) * seq;
            for (int h = 0; h < heads; ++h) {
                auto Qh = QKV.block(row0, h * dh, seq, dh);
                auto Kh = QKV.block(row0, d + h * dh, seq, dh);
                auto Vh = QKV.block(row0, 2 * d + h * dh, seq, dh);
                Mat scores(seq, seq);
                scores.noalias() = Qh * Kh.transpose();
                mx = scores.rowwise().maxCoeff();
                scores = ((scores.colwise() - mx) * alpha).array().exp().matrix();
                sum = scores.rowwise().sum();
                scores.array().colwise() /= sum.array();
                out.block(row0, h * dh, seq, dh).noalias() = scores * Vh;
                probs->push_back(std::move(scores));
            }
        }
        return make(std::move(out), {qkv}, [qkv, probs, batch, seq, heads, d, dh, alpha](Tape& t) {
            if (!t.needs(qkv)) return;
            const Mat& g = t.nodes_[std::size_t(t.cur_)].grad;
            const Mat& QKV = t.val(qkv);
            Mat& gq = t.gbuf(qkv);
            Mat dP(seq, seq), dS(seq, seq);
            for (int b = 0; b < batch; ++b) {
                const std::int64_t row0 = std::int64_t(b) * seq;
                for (int h = 0; h < heads; ++h) {
                    const Mat& P = (*probs)[std::size_t(b) * heads + std::size_t(h)];
                    auto Qh = QKV.block(row0, h * dh, seq, dh);
                    auto Kh = QKV.block(row0, d + h * dh, seq, dh);
                    auto Vh = QKV.block(row0, 2 * d + h * dh, seq, dh);
                    auto dO = g.block(row0, h * dh, seq, dh);
                    dP.noalias() = dO * Vh.transpose();
                    VecS<S> rs = (dP.array() * P.array()).rowwise().sum().matrix();
                    dS = (P.array() * (dP.colwise() - rs).array()).matrix();
                    gq.block(row0, h * dh, seq, dh).noalias() += alpha * (dS * Kh);
                    gq.block(row0, d + h * dh, seq, dh).noalias() += alpha * (dS.transpose() * Qh);
                    gq.block(row0, 2 * d + h * dh, seq, dh).noalias() += P.transpose() * dO;
                }
            }
        });
    }

    // mean over rows of (1 - cos(a_i, target_i)); norms clamped at eps
    int cosine_loss_mean(int a, Mat target, S eps) {
        const Mat& A = val(a);
        check(A.rows() == target.rows() && A.cols() == target.cols(), Errc::ShapeError, "cosine dims");
        check(A.rows() > 0, Errc::ShapeError, "cosine on empty batch");
        auto tgt = std::make_shared<Mat>(std::move(target));
        const auto n = A.rows();
        VecS<S> na(n), sim(n);
        S acc = S(0);
        for (Eigen::Index i = 0; i < n; ++i) {
            S va = A.row(i).norm();
            S vb = tgt->row(i).norm();
            S ca = va > eps ? va : eps;
            S cb = vb > eps ? vb : eps;
            S s = A.row(i).dot(tgt->row(i)) / (ca * cb);
            na(i) = va;
            sim(i) = s;
            acc += S(1) - s;
        }
        Mat out(1, 1);
        out(0, 0) = acc / S(n);
        auto saved = std::make_shared<std::pair<VecS<S>, VecS<S>>>(std::move(na), std::move(sim));
        return make(std::move(out), {a}, [a, tgt, saved, eps, n](Tape& t) {
            if (!t.needs(a)) return;
            const S g = t.nodes_[std::size_t(t.cur_)].grad(0, 0);
            const Mat& A = t.val(a);
            Mat& ga = t.gbuf(a);
            const S w = -g / S(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                S va = saved->first(i);
                S ca = va > eps ? va : eps;
                S vb = tgt->row(i).norm();
                S cb = vb > eps ? vb : eps;
                ga.row(i) += w * (tgt->row(i) / (ca * cb));
                if (va > eps) ga.row(i) -= w * (saved->second(i) / (ca * ca)) * A.row(i);
            }
        });
    }

    // mean over all entries of (a - target)^2
    int mse_loss_mean(int a, Mat target) {
        const Mat& A = val(a);
        check(A.rows() == target.rows() && A.cols() == target.cols(), Errc::ShapeError, "mse dims");
        check(A.size() > 0, Errc::ShapeError, "mse on empty batch");
        auto tgt = std::make_shared<Mat>(std::move(target));
        Mat out(1, 1);
        out(0, 0) = (A - *tgt).squaredNorm() / S(A.size());
        return make(std::move(out), {a}, [a, tgt](Tape& t) {
            if (!t.needs(a)) return;
            const S g = t.nodes_[std::size_t(t.cur_)].grad(0, 0);
            const Mat& A = t.val(a);
            t.gbuf(a) += (S(2) * g / S(A.size())) * (A - *tgt);
        });
    }

    int sum_scaled(std::vector<std::pair<int, S>> terms) {
        check(!terms.empty(), Errc::ShapeError, "empty sum");
        Mat out(1, 1);
        out(0, 0) = S(0);
        for (auto& [id, w] : terms) {
            check(val(id).size() == 1, Errc::ShapeError, "sum over non-scalars");
            out(0, 0) += w * val(id)(0, 0);
        }
        std::vector<int> parents;
        for (auto& [id, w] : terms) parents.push_back(id);
        auto saved = std::make_shared<std::vector<std::pair<int, S>>>(std::move(terms));
        return make(std::move(out), parents, [saved](Tape& t) {
            const S g = t.nodes_[std::size_t(t.cur_)].grad(0, 0);
            for (auto& [id, w] : *saved)
                if (t.needs(id)) t.gbuf(id)(0, 0) += w * g;
        });
    }

    void backward(int id) {
        check(val(id).size() == 1, Errc::ShapeError, "backward from non-scalar");
        gbuf(id)(0, 0) = S(1);
        for (int i = id; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (!n.back || !n.needs || n.grad.size() == 0) continue;
            cur_ = i;
            n.back(*this);
        }
    }

private:
    int make(Mat val, std::initializer_list<int> parents, std::function<void(Tape&)> back) {
        return make(std::move(val), std::vector<int>(parents), std::move(back));
    }
    int make(Mat val, const std::vector<int>& parents, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(val);
        for (int p : parents)
            if (p >= 0 && nodes_[std::size_t(p)].needs) n.needs = true;
        if (n.needs) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return int(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    int cur_ = -1;
};

}  // namespace pathryoshka
