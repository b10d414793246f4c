#include "pathryoshka/vit.hpp"

namespace pathryoshka {

BackboneConfig backbone_preset(const std::string& name) {
    BackboneConfig c;
    c.preset = name;
    if (name == "B") {
        c.depth = 12; c.width = 768; c.heads = 12; c.patch_size = 14; c.registers = 4;
    } else if (name == "S") {
        c.depth = 12; c.width = 384; c.heads = 6; c.patch_size = 14; c.registers = 4;
    } else if (name == "tiny") {
        c.depth = 4; c.width = 96; c.heads = 3; c.patch_size = 14; c.registers = 2;
    } else {
        fail(Errc::ConfigError, "unknown backbone preset: '" + name + "' (expected B|S|tiny)");
    }
    c.image_size = 224;
    c.validate();
    return c;
}

MatF im2row(const std::vector<const Image*>& views, const Preprocess& prep, int patch_size) {
    check(!views.empty(), Errc::ShapeError, "im2row on empty batch");
    const Image& first = *views.front();
    check(first.width == first.height && first.width % patch_size == 0, Errc::ShapeError,
          "view size not divisible by patch size");
    const int G = first.width / patch_size;
    const int pd = 3 * patch_size * patch_size;
    const float inv255 = 1.0f / 255.0f;
    float mean[3], inv_std[3];
    for (int c = 0; c < 3; ++c) {
        mean[c] = float(prep.mean[std::size_t(c)]);
        inv_std[c] = float(1.0 / prep.stdev[std::size_t(c)]);
    }

    MatF rows(std::int64_t(views.size()) * G * G, pd);
    std::int64_t r = 0;
    for (const Image* vp : views) {
        const Image& v = *vp;
        check(v.width == first.width && v.height == first.height, Errc::ShapeError, "mixed view sizes in batch");
        for (int gy = 0; gy < G; ++gy) {
            for (int gx = 0; gx < G; ++gx) {
                float* dst = rows.row(r).data();
                for (int py = 0; py < patch_size; ++py) {
                    const std::uint8_t* src = v.px(gx * patch_size, gy * patch_size + py);
                    for (int px = 0; px < patch_size; ++px)
                        for (int c = 0; c < 3; ++c)
                            *dst++ = (float(src[px * 3 + c]) * inv255 - mean[c]) * inv_std[c];
                }
                ++r;
            }
        }
    }
    return rows;
}

std::vector<TokenBundle> split_bundles(const BatchTokens& bt) {
    std::vector<TokenBundle> out(std::size_t(bt.batch));
    const int gsq = bt.grid * bt.grid;
    const int R = bt.batch > 0 ? int(bt.registers.rows()) / bt.batch : 0;
    for (int b = 0; b < bt.batch; ++b) {
        out[std::size_t(b)].cls = bt.cls.row(b).transpose();
        out[std::size_t(b)].patches = bt.patches.middleRows(std::int64_t(b) * gsq, gsq);
        if (R > 0) out[std::size_t(b)].registers = bt.registers.middleRows(std::int64_t(b) * R, R);
    }
    return out;
}

BatchTokens vit_forward_images(const VitParams& p, const std::vector<const Image*>& views) {
    for (const Image* v : views)
        check(v->width == p.cfg.image_size && v->height == p.cfg.image_size, Errc::ShapeError,
              "view resolution does not match model image size");
    return vit_forward(p, im2row(views, p.prep, p.cfg.patch_size));
}

DeployedCost deployed_cost(const BackboneConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.width;
    const std::int64_t pd = 3ll * cfg.patch_size * cfg.patch_size;
    const std::int64_t gsq = cfg.grid_sq();
    const std::int64_t T = cfg.seq_len();
    const std::int64_t m = cfg.mlp_dim();

    DeployedCost c;
    c.params = pd * d + d;                       // patch embed
    c.params += d;                               // cls
    c.params += std::int64_t(cfg.registers) * d;
    c.params += (1 + gsq) * d;                   // pos
    c.params += cfg.depth * (2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * m + m + m * d + d);
    c.params += 2 * d;                           // final norm

    // MACs of the dense layers; attention score/context products excluded,
    // matching the convention behind the reported per-model FLOP figures.
    std::int64_t macs = gsq * pd * d;
    macs += std::int64_t(cfg.depth) * T * (d * 3 * d + d * d + 2 * d * m);
    c.flops = 2 * macs;
    return c;
}

}  // namespace pathryoshka
