#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pathryoshka/common.hpp"
#include "pathryoshka/image.hpp"
#include "pathryoshka/tape.hpp"

namespace pathryoshka {

struct BackboneConfig {
    int depth = 12;
    int width = 768;
    int heads = 12;
    int patch_size = 14;
    int registers = 4;
    int image_size = 224;
    std::string preset;  // "B", "S", "tiny" or empty for custom

    void validate() const {
        check(depth >= 1 && width >= 1 && heads >= 1 && patch_size >= 1 && image_size >= patch_size,
              Errc::ConfigError, "backbone dims must be positive");
        check(width % heads == 0, Errc::ConfigError, "width must be divisible by heads");
        check(image_size % patch_size == 0, Errc::ConfigError, "image size must be divisible by patch size");
        check(registers >= 0, Errc::ConfigError, "register count must be >= 0");
    }
    int grid() const { return image_size / patch_size; }
    int grid_sq() const { return grid() * grid(); }
    int seq_len() const { return 1 + registers + grid_sq(); }
    int mlp_dim() const { return 4 * width; }

    bool operator==(const BackboneConfig&) const = default;
};

BackboneConfig backbone_preset(const std::string& name);

// Normalization constants in [0,1] intensity units.
struct Preprocess {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stdev{0.229, 0.224, 0.225};
    bool operator==(const Preprocess&) const = default;
};

// Patch rows for a batch of views: (B*G^2) x (3*p^2), per-patch layout (py, px, c).
MatF im2row(const std::vector<const Image*>& views, const Preprocess& prep, int patch_size);

struct DeployedCost {
    std::int64_t params = 0;
    std::int64_t flops = 0;  // 2 * MACs of patch-embed + qkv/proj/mlp linear layers
};

template <class S>
struct VitBlockT {
    MatR<S> ln1_g, ln1_b;
    MatR<S> w_qkv, b_qkv;    // d x 3d, 1 x 3d
    MatR<S> w_proj, b_proj;  // d x d, 1 x d
    MatR<S> ln2_g, ln2_b;
    MatR<S> w_fc1, b_fc1;    // d x 4d, 1 x 4d
    MatR<S> w_fc2, b_fc2;    // 4d x d, 1 x d
};

template <class S>
struct VitParamsT {
    BackboneConfig cfg;
    Preprocess prep;
    MatR<S> w_patch, b_patch;  // (3p^2) x d, 1 x d
    MatR<S> cls;               // 1 x d
    MatR<S> registers;         // R x d (zero rows allowed)
    MatR<S> pos;               // (1+G^2) x d; registers carry no positional term
    std::vector<VitBlockT<S>> blocks;
    MatR<S> lnf_g, lnf_b;

    // Enumerates (name, matrix) pairs in a stable order; the names are the
    // checkpoint keys ("backbone/..." prefix added by the archive layer).
    template <class F>
    void visit(F&& f) {
        f("patch/w", w_patch);
        f("patch/b", b_patch);
        f("cls", cls);
        if (cfg.registers > 0) f("registers", registers);
        f("pos", pos);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + "/";
            auto& b = blocks[i];
            f(p + "ln1/g", b.ln1_g);
            f(p + "ln1/b", b.ln1_b);
            f(p + "qkv/w", b.w_qkv);
            f(p + "qkv/b", b.b_qkv);
            f(p + "proj/w", b.w_proj);
            f(p + "proj/b", b.b_proj);
            f(p + "ln2/g", b.ln2_g);
            f(p + "ln2/b", b.ln2_b);
            f(p + "fc1/w", b.w_fc1);
            f(p + "fc1/b", b.b_fc1);
            f(p + "fc2/w", b.w_fc2);
            f(p + "fc2/b", b.b_fc2);
        }
        f("lnf/g", lnf_g);
        f("lnf/b", lnf_b);
    }
    template <class F>
    void visit_const(F&& f) const {
        const_cast<VitParamsT*>(this)->visit([&](const std::string& n, MatR<S>& m) { f(n, static_cast<const MatR<S>&>(m)); });
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        visit_const([&](const std::string&, const MatR<S>& m) { n += m.size(); });
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
    VitParamsT<T2> cast() const {
        VitParamsT<T2> out;
        out.cfg = cfg;
        out.prep = prep;
        out.blocks.resize(blocks.size());
        out.w_patch = w_patch.template cast<T2>();
        out.b_patch = b_patch.template cast<T2>();
        out.cls = cls.template cast<T2>();
        out.registers = registers.template cast<T2>();
        out.pos = pos.template cast<T2>();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            auto& o = out.blocks[i];
            o.ln1_g = b.ln1_g.template cast<T2>();
            o.ln1_b = b.ln1_b.template cast<T2>();
            o.w_qkv = b.w_qkv.template cast<T2>();
            o.b_qkv = b.b_qkv.template cast<T2>();
            o.w_proj = b.w_proj.template cast<T2>();
            o.b_proj = b.b_proj.template cast<T2>();
            o.ln2_g = b.ln2_g.template cast<T2>();
            o.ln2_b = b.ln2_b.template cast<T2>();
            o.w_fc1 = b.w_fc1.template cast<T2>();
            o.b_fc1 = b.b_fc1.template cast<T2>();
            o.w_fc2 = b.w_fc2.template cast<T2>();
            o.b_fc2 = b.b_fc2.template cast<T2>();
        }
        out.lnf_g = lnf_g.template cast<T2>();
        out.lnf_b = lnf_b.template cast<T2>();
        return out;
    }
};

using VitParams = VitParamsT<float>;

// Batched token output, images stacked along rows.
template <class S>
struct BatchTokensT {
    MatR<S> cls;        // B x d
    MatR<S> patches;    // (B*G^2) x d
    MatR<S> registers;  // (B*R) x d
    int batch = 0;
    int grid = 0;
};

using BatchTokens = BatchTokensT<float>;

// Per-image view used by public interfaces and the teacher hub.
struct TokenBundle {
    Eigen::VectorXf cls;
    MatF patches;    // G^2 x d
    MatF registers;  // R x d
};

std::vector<TokenBundle> split_bundles(const BatchTokens& bt);

namespace detail {

template <class S>
MatR<S> randn_mat(Rng rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    MatR<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = S(rng.normal() * stddev);
    return m;
}

}  // namespace detail

// Deterministic init; each tensor draws from a substream keyed by its name,
// so the layout of the visit order does not affect values.
template <class S>
VitParamsT<S> build_vit(const BackboneConfig& cfg, std::uint64_t seed, Preprocess prep = {}) {
    cfg.validate();
    const int d = cfg.width;
    const int pd = 3 * cfg.patch_size * cfg.patch_size;
    VitParamsT<S> p;
    p.cfg = cfg;
    p.prep = prep;
    p.w_patch = MatR<S>(pd, d);
    p.b_patch = MatR<S>::Zero(1, d);
    p.cls = MatR<S>(1, d);
    p.registers = MatR<S>(cfg.registers, d);
    p.pos = MatR<S>(1 + cfg.grid_sq(), d);
    p.blocks.resize(std::size_t(cfg.depth));
    for (auto& b : p.blocks) {
        b.ln1_g = MatR<S>::Ones(1, d);
        b.ln1_b = MatR<S>::Zero(1, d);
        b.w_qkv = MatR<S>(d, 3 * d);
        b.b_qkv = MatR<S>::Zero(1, 3 * d);
        b.w_proj = MatR<S>(d, d);
        b.b_proj = MatR<S>::Zero(1, d);
        b.ln2_g = MatR<S>::Ones(1, d);
        b.ln2_b = MatR<S>::Zero(1, d);
        b.w_fc1 = MatR<S>(d, cfg.mlp_dim());
        b.b_fc1 = MatR<S>::Zero(1, cfg.mlp_dim());
        b.w_fc2 = MatR<S>(cfg.mlp_dim(), d);
        b.b_fc2 = MatR<S>::Zero(1, d);
    }
    p.lnf_g = MatR<S>::Ones(1, d);
    p.lnf_b = MatR<S>::Zero(1, d);

    Rng root(seed);
    p.visit([&](const std::string& name, MatR<S>& m) {
        if (name.ends_with("/b") || name.ends_with("ln1/g") || name.ends_with("ln2/g") || name.ends_with("lnf/g"))
            return;  // biases stay zero, norm gains stay one
        m = detail::randn_mat<S>(root.fork(name), m.rows(), m.cols(), 0.02);
    });
    return p;
}

// Plain inference forward (no tape). Input rows from im2row.
template <class S>
BatchTokensT<S> vit_forward(const VitParamsT<S>& p, const MatR<S>& patch_rows) {
    const int gsq = p.cfg.grid_sq();
    check(patch_rows.cols() == p.w_patch.rows(), Errc::ShapeError, "patch row width mismatch");
    check(patch_rows.rows() % gsq == 0, Errc::ShapeError, "patch rows not a multiple of G^2");
    const int B = int(patch_rows.rows()) / gsq;
    const int T = p.cfg.seq_len();
    const int R = p.cfg.registers;
    const int d = p.cfg.width;
    const int H = p.cfg.heads;
    const int dh = d / H;
    const S alpha = S(1) / std::sqrt(S(dh));
    const S eps = S(1e-6);

    MatR<S> emb(std::int64_t(B) * gsq, d);
    emb.noalias() = patch_rows * p.w_patch;
    emb.rowwise() += p.b_patch.row(0);

    MatR<S> x(std::int64_t(B) * T, d);
    for (int b = 0; b < B; ++b) {
        x.row(std::int64_t(b) * T) = p.cls.row(0) + p.pos.row(0);
        if (R > 0) x.middleRows(std::int64_t(b) * T + 1, R) = p.registers;
        x.middleRows(std::int64_t(b) * T + 1 + R, gsq) =
            emb.middleRows(std::int64_t(b) * gsq, gsq) + p.pos.middleRows(1, gsq);
    }

    auto layer_norm = [&](const MatR<S>& in, const MatR<S>& g, const MatR<S>& be) {
        VecS<S> mu = in.rowwise().mean();
        MatR<S> xc = in.colwise() - mu;
        VecS<S> inv = (xc.array().square().rowwise().sum() / S(in.cols()) + eps).rsqrt().matrix();
        MatR<S> out = ((xc.array().colwise() * inv.array()).rowwise() * g.row(0).array()).matrix();
        out.rowwise() += be.row(0);
        return out;
    };

    MatR<S> scores;
    for (const auto& blk : p.blocks) {
        MatR<S> h = layer_norm(x, blk.ln1_g, blk.ln1_b);
        MatR<S> qkv(std::int64_t(B) * T, 3 * d);
        qkv.noalias() = h * blk.w_qkv;
        qkv.rowwise() += blk.b_qkv.row(0);
        MatR<S> att(std::int64_t(B) * T, d);
        for (int b = 0; b < B; ++b) {
            const std::int64_t r0 = std::int64_t(b) * T;
            for (int hd = 0; hd < H; ++hd) {
                auto Qh = qkv.block(r0, hd * dh, T, dh);
                auto Kh = qkv.block(r0, d + hd * dh, T, dh);
                auto Vh = qkv.block(r0, 2 * d + hd * dh, T, dh);
                scores.noalias() = Qh * Kh.transpose();
                scores *= alpha;
                VecS<S> mx = scores.rowwise().maxCoeff();
                scores = (scores.colwise() - mx).array().exp().matrix();
                VecS<S> sum = scores.rowwise().sum();
                scores.array().colwise() /= sum.array();
                att.block(r0, hd * dh, T, dh).noalias() = scores * Vh;
            }
        }
        MatR<S> proj(std::int64_t(B) * T, d);
        proj.noalias() = att * blk.w_proj;
        proj.rowwise() += blk.b_proj.row(0);
        x += proj;

        MatR<S> h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
        MatR<S> f1(std::int64_t(B) * T, p.cfg.mlp_dim());
        f1.noalias() = h2 * blk.w_fc1;
        f1.rowwise() += blk.b_fc1.row(0);
        const S c = S(0.7978845608028654), k = S(0.044715);
        f1 = (S(0.5) * f1.array() * (S(1) + (c * (f1.array() + k * f1.array().cube())).tanh())).matrix();
        MatR<S> f2(std::int64_t(B) * T, d);
        f2.noalias() = f1 * blk.w_fc2;
        f2.rowwise() += blk.b_fc2.row(0);
        x += f2;
    }
    x = layer_norm(x, p.lnf_g, p.lnf_b);

    BatchTokensT<S> out;
    out.batch = B;
    out.grid = p.cfg.grid();
    out.cls.resize(B, d);
    out.patches.resize(std::int64_t(B) * gsq, d);
    out.registers.resize(std::int64_t(B) * R, d);
    for (int b = 0; b < B; ++b) {
        out.cls.row(b) = x.row(std::int64_t(b) * T);
        if (R > 0) out.registers.middleRows(std::int64_t(b) * R, R) = x.middleRows(std::int64_t(b) * T + 1, R);
        out.patches.middleRows(std::int64_t(b) * gsq, gsq) = x.middleRows(std::int64_t(b) * T + 1 + R, gsq);
    }
    return out;
}

// Convenience: raw views -> tokens (normalization + im2row + forward).
BatchTokens vit_forward_images(const VitParams& p, const std::vector<const Image*>& views);

template <class S>
struct LeafMap {
    std::unordered_map<std::string, int> ids;
    int at(const std::string& k) const {
        auto it = ids.find(k);
        check(it != ids.end(), Errc::KeyError, "no tape leaf named " + k);
        return it->second;
    }
};

// Pushes every parameter as a trainable tape leaf under `prefix`.
template <class S>
void push_vit_leaves(Tape<S>& tape, const VitParamsT<S>& p, const std::string& prefix, LeafMap<S>& map,
                     bool trainable = true) {
    const_cast<VitParamsT<S>&>(p).visit([&](const std::string& name, MatR<S>& m) {
        map.ids[prefix + name] = tape.leaf(m, trainable);
    });
}

template <class S>
struct VitTapeOut {
    int cls = -1;      // B x d
    int patches = -1;  // (B*G^2) x d
};

// Training-graph forward; reads parameter leaves from `map` under `prefix`.
template <class S>
VitTapeOut<S> vit_tape_forward(Tape<S>& tape, const BackboneConfig& cfg, const LeafMap<S>& map,
                               const std::string& prefix, int patch_rows_leaf) {
    const int gsq = cfg.grid_sq();
    const int B = int(tape.val(patch_rows_leaf).rows()) / gsq;
    check(std::int64_t(B) * gsq == tape.val(patch_rows_leaf).rows(), Errc::ShapeError, "patch rows");
    const int T = cfg.seq_len();
    const int R = cfg.registers;
    const S eps = S(1e-6);

    auto L = [&](const std::string& n) { return map.at(prefix + n); };

    int emb = tape.linear(patch_rows_leaf, L("patch/w"), L("patch/b"));
    int cls_tok = tape.add(L("cls"), tape.slice_rows(L("pos"), 0, 1));
    int patch_tok = tape.add_pos_broadcast(emb, tape.slice_rows(L("pos"), 1, gsq), B);
    int x = tape.interleave_tokens(cls_tok, cfg.registers > 0 ? L("registers") : -1, patch_tok, B, gsq);

    for (int i = 0; i < cfg.depth; ++i) {
        const std::string p = "block" + std::to_string(i) + "/";
        int h = tape.layernorm(x, L(p + "ln1/g"), L(p + "ln1/b"), eps);
        int qkv = tape.linear(h, L(p + "qkv/w"), L(p + "qkv/b"));
        int att = tape.attention(qkv, B, T, cfg.heads);
        int proj = tape.linear(att, L(p + "proj/w"), L(p + "proj/b"));
        x = tape.add(x, proj);
        int h2 = tape.layernorm(x, L(p + "ln2/g"), L(p + "ln2/b"), eps);
        int f1 = tape.gelu(tape.linear(h2, L(p + "fc1/w"), L(p + "fc1/b")));
        int f2 = tape.linear(f1, L(p + "fc2/w"), L(p + "fc2/b"));
        x = tape.add(x, f2);
    }
    x = tape.layernorm(x, L("lnf/g"), L("lnf/b"), eps);

    VitTapeOut<S> out;
    out.cls = tape.gather_rows_mod(x, T, 0, 1);
    out.patches = tape.gather_rows_mod(x, T, 1 + R, gsq);
    return out;
}

// shadow <- decay*shadow + (1-decay)*params, elementwise.
template <class S>
void ema_update(const VitParamsT<S>& params, VitParamsT<S>& shadow, double decay) {
    check(decay >= 0.0 && decay <= 1.0, Errc::ConfigError, "ema decay must be in [0,1]");
    check(params.cfg == shadow.cfg, Errc::ShapeError, "ema config mismatch");
    const S a = S(decay), b = S(1.0 - decay);
    std::vector<const MatR<S>*> src;
    params.visit_const([&](const std::string&, const MatR<S>& m) { src.push_back(&m); });
    std::size_t i = 0;
    shadow.visit([&](const std::string& name, MatR<S>& s) {
        check(i < src.size() && s.rows() == src[i]->rows() && s.cols() == src[i]->cols(), Errc::ShapeError,
              "ema shape mismatch at " + name);
        s = a * s + b * (*src[i]);
        ++i;
    });
    check(i == src.size(), Errc::ShapeError, "ema tensor count mismatch");
}

DeployedCost deployed_cost(const BackboneConfig& cfg);

}  // namespace pathryoshka
