#pragma once

#include <string>
#include <vector>

#include "pathryoshka/tape.hpp"
#include "pathryoshka/vit.hpp"

namespace pathryoshka {

struct NestingLevels {
    std::vector<int> levels;  // strictly decreasing, levels[0] = student width

    void validate() const {
        check(!levels.empty(), Errc::ConfigError, "empty nesting levels");
        for (std::size_t i = 0; i < levels.size(); ++i) {
            check(levels[i] >= 1, Errc::ConfigError, "nesting level < 1");
            check(i == 0 || levels[i] < levels[i - 1], Errc::ConfigError, "levels must be strictly decreasing");
        }
    }
    int depth() const { return int(levels.size()); }
};

// [d, d/2, d/4, ...] by successive integer halving.
inline NestingLevels nesting_levels(int d, int depth) {
    check(depth >= 1, Errc::ConfigError, "nesting depth must be >= 1");
    check(d >= (1 << (depth - 1)), Errc::ConfigError,
          "width " + std::to_string(d) + " too small for " + std::to_string(depth) + " halvings");
    NestingLevels out;
    int v = d;
    for (int i = 0; i < depth; ++i) {
        out.levels.push_back(v);
        v /= 2;
    }
    out.validate();
    return out;
}

enum class HeadKind { cls = 0, patch = 1 };

inline const char* to_string(HeadKind k) { return k == HeadKind::cls ? "cls" : "patch"; }

// 3-layer perceptron m -> d_t -> d_t -> d_t; weights stored input x output.
template <class S>
struct MlpHeadT {
    MatR<S> w1, b1, w2, b2, w3, b3;

    std::int64_t param_count() const {
        return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
    }
};

// One head per (teacher, level, kind); no sharing, no norm layers. The
// nonlinearity between layers is SiLU (fixed; recorded in checkpoint meta).
template <class S>
struct HeadBankT {
    int student_dim = 0;
    std::vector<std::string> teacher_names;
    std::vector<int> teacher_dims;
    NestingLevels levels;
    std::vector<MlpHeadT<S>> heads;  // [teacher][level][kind]

    std::size_t n_heads() const { return heads.size(); }

    int teacher_index(const std::string& name) const {
        for (std::size_t i = 0; i < teacher_names.size(); ++i)
            if (teacher_names[i] == name) return int(i);
        fail(Errc::KeyError, "no head for teacher '" + name + "'");
    }
    int level_index(int m) const {
        for (std::size_t i = 0; i < levels.levels.size(); ++i)
            if (levels.levels[i] == m) return int(i);
        fail(Errc::KeyError, "no head for level " + std::to_string(m));
    }

    MlpHeadT<S>& head(int t, int level_idx, HeadKind k) {
        return heads[(std::size_t(t) * levels.levels.size() + std::size_t(level_idx)) * 2 + std::size_t(k)];
    }
    const MlpHeadT<S>& head(int t, int level_idx, HeadKind k) const {
        return heads[(std::size_t(t) * levels.levels.size() + std::size_t(level_idx)) * 2 + std::size_t(k)];
    }

    // Checkpoint keys: head/{teacher}/{kind}/{m}/{w1,b1,w2,b2,w3,b3}
    template <class F>
    void visit(F&& f) {
        for (std::size_t t = 0; t < teacher_names.size(); ++t) {
            for (std::size_t li = 0; li < levels.levels.size(); ++li) {
                for (HeadKind k : {HeadKind::cls, HeadKind::patch}) {
                    auto& h = head(int(t), int(li), k);
                    const std::string p = "head/" + teacher_names[t] + "/" + to_string(k) + "/" +
                                          std::to_string(levels.levels[li]) + "/";
                    f(p + "w1", h.w1);
                    f(p + "b1", h.b1);
                    f(p + "w2", h.w2);
                    f(p + "b2", h.b2);
                    f(p + "w3", h.w3);
                    f(p + "b3", h.b3);
                }
            }
        }
    }
    template <class F>
    void visit_const(F&& f) const {
        const_cast<HeadBankT*>(this)->visit(
            [&](const std::string& n, MatR<S>& m) { f(n, static_cast<const MatR<S>&>(m)); });
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (auto& h : heads) n += h.param_count();
        return n;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        visit_const([&](const std::string& name, const MatR<S>& m) {
            h = fnv1a(name, h);
            h = fnv1a(m.data(), std::size_t(m.size()) * sizeof(S), h);
        });
        return h;
    }

    template <class T2>
    HeadBankT<T2> cast() const {
        HeadBankT<T2> out;
        out.student_dim = student_dim;
        out.teacher_names = teacher_names;
        out.teacher_dims = teacher_dims;
        out.levels = levels;
        out.heads.resize(heads.size());
        for (std::size_t i = 0; i < heads.size(); ++i) {
            out.heads[i].w1 = heads[i].w1.template cast<T2>();
            out.heads[i].b1 = heads[i].b1.template cast<T2>();
            out.heads[i].w2 = heads[i].w2.template cast<T2>();
            out.heads[i].b2 = heads[i].b2.template cast<T2>();
            out.heads[i].w3 = heads[i].w3.template cast<T2>();
            out.heads[i].b3 = heads[i].b3.template cast<T2>();
        }
        return out;
    }
};

using HeadBank = HeadBankT<float>;

template <class S>
HeadBankT<S> build_head_bank(int d, const std::vector<std::string>& teacher_names,
                             const std::vector<int>& teacher_dims, const NestingLevels& levels,
                             std::uint64_t seed) {
    levels.validate();
    check(teacher_names.size() == teacher_dims.size() && !teacher_names.empty(), Errc::ConfigError,
          "teacher names/dims mismatch");
    check(levels.levels.front() == d, Errc::ConfigError, "largest nesting level must equal student width");
    for (int m : levels.levels) check(m <= d, Errc::ConfigError, "nesting level exceeds student width");

    HeadBankT<S> bank;
    bank.student_dim = d;
    bank.teacher_names = teacher_names;
    bank.teacher_dims = teacher_dims;
    bank.levels = levels;
    bank.heads.resize(teacher_names.size() * levels.levels.size() * 2);
    for (std::size_t t = 0; t < teacher_names.size(); ++t) {
        const int dt = teacher_dims[t];
        check(dt >= 1, Errc::ConfigError, "teacher dim must be >= 1");
        for (std::size_t li = 0; li < levels.levels.size(); ++li) {
            const int m = levels.levels[li];
            for (HeadKind k : {HeadKind::cls, HeadKind::patch}) {
                auto& h = bank.head(int(t), int(li), k);
                h.w1 = MatR<S>(m, dt);
                h.b1 = MatR<S>::Zero(1, dt);
                h.w2 = MatR<S>(dt, dt);
                h.b2 = MatR<S>::Zero(1, dt);
                h.w3 = MatR<S>(dt, dt);
                h.b3 = MatR<S>::Zero(1, dt);
            }
        }
    }
    Rng root(hash_combine(seed, fnv1a("head-bank")));
    bank.visit([&](const std::string& name, MatR<S>& m) {
        if (name.ends_with("b1") || name.ends_with("b2") || name.ends_with("b3")) return;
        m = detail::randn_mat<S>(root.fork(name), m.rows(), m.cols(), 1.0 / std::sqrt(double(m.rows())));
    });
    return bank;
}

template <class S>
MatR<S> head_forward(const MlpHeadT<S>& h, const MatR<S>& x_prefix) {
    check(x_prefix.cols() == h.w1.rows(), Errc::ShapeError, "head input dim mismatch");
    auto silu = [](MatR<S> v) { return ((v.array() / (S(1) + (-v.array()).exp()))).matrix().eval(); };
    MatR<S> a = x_prefix * h.w1;
    a.rowwise() += h.b1.row(0);
    a = silu(std::move(a));
    MatR<S> b = a * h.w2;
    b.rowwise() += h.b2.row(0);
    b = silu(std::move(b));
    MatR<S> c = b * h.w3;
    c.rowwise() += h.b3.row(0);
    return c;
}

// Consumes only the first m components of cls.
template <class S>
VecS<S> project_cls(const HeadBankT<S>& bank, const VecS<S>& cls, const std::string& teacher, int m) {
    const int t = bank.teacher_index(teacher);
    const int li = bank.level_index(m);
    check(cls.size() >= m, Errc::ShapeError, "cls shorter than nesting level");
    MatR<S> x = cls.transpose().leftCols(m);
    return head_forward(bank.head(t, li, HeadKind::cls), x).row(0).transpose();
}

// Tokenwise, one shared head per (teacher, level).
template <class S>
MatR<S> project_patches(const HeadBankT<S>& bank, const MatR<S>& patches, const std::string& teacher, int m) {
    const int t = bank.teacher_index(teacher);
    const int li = bank.level_index(m);
    check(patches.cols() >= m, Errc::ShapeError, "patch tokens shorter than nesting level");
    return head_forward(bank.head(t, li, HeadKind::patch), MatR<S>(patches.leftCols(m)));
}

template <class S>
void push_head_leaves(Tape<S>& tape, HeadBankT<S>& bank, LeafMap<S>& map, bool trainable = true) {
    bank.visit([&](const std::string& name, MatR<S>& m) { map.ids[name] = tape.leaf(m, trainable); });
}

// input_node: N x (>= m); slices the prefix on-tape so the contract is explicit.
template <class S>
int head_tape_forward(Tape<S>& tape, const HeadBankT<S>& bank, const LeafMap<S>& map, int input_node,
                      const std::string& teacher, int m, HeadKind kind) {
    bank.teacher_index(teacher);  // KeyError on unknown
    bank.level_index(m);
    const std::string p = "head/" + teacher + "/" + std::string(to_string(kind)) + "/" + std::to_string(m) + "/";
    int x = tape.slice_cols(input_node, 0, m);
    int a = tape.silu(tape.linear(x, map.at(p + "w1"), map.at(p + "b1")));
    int b = tape.silu(tape.linear(a, map.at(p + "w2"), map.at(p + "b2")));
    return tape.linear(b, map.at(p + "w3"), map.at(p + "b3"));
}

}  // namespace pathryoshka
