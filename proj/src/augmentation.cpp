#include "pathryoshka/augmentation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace pathryoshka {

void VisualAugConfig::validate() const {
    check(std::isfinite(hed_scale) && hed_scale >= 0.0, Errc::ConfigError, "hed_scale must be finite, >= 0");
    check(std::isfinite(hed_shift) && hed_shift >= 0.0, Errc::ConfigError, "hed_shift must be finite, >= 0");
    check(blur_prob >= 0.0 && blur_prob <= 1.0, Errc::ConfigError, "blur_prob must be in [0,1]");
    check(blur_sigma_min >= 0.0 && blur_sigma_max >= blur_sigma_min, Errc::ConfigError,
          "blur sigma range invalid");
}

CropSpec sample_crop(int W, int H, Rng& rng) {
    check(W >= kViewSize && H >= kViewSize, Errc::InvalidSize, "source smaller than 224x224");
    const double WH = double(W) * double(H);
    for (int attempt = 0; attempt < 10; ++attempt) {
        double area_frac = rng.uniform(0.25, 1.0);
        double aspect = rng.uniform(0.9, 1.1);  // (w/h) relative to source aspect
        int w = int(std::lround(std::sqrt(area_frac * aspect) * double(W)));
        int h = int(std::lround(std::sqrt(area_frac / aspect) * double(H)));
        if (w < 1 || h < 1 || w > W || h > H) continue;
        double af = double(w) * double(h) / WH;
        double ar = (double(w) / double(h)) * (double(H) / double(W));
        if (af < 0.25 || af > 1.0 || ar < 0.9 || ar > 1.1) continue;
        CropSpec c;
        c.w = w;
        c.h = h;
        c.x0 = int(rng.uniform_u64(std::uint64_t(W - w) + 1));
        c.y0 = int(rng.uniform_u64(std::uint64_t(H - h) + 1));
        c.hflip = rng.coin(0.5);
        c.vflip = rng.coin(0.5);
        return c;
    }
    CropSpec c;
    c.x0 = 0;
    c.y0 = 0;
    c.w = W;
    c.h = H;
    c.hflip = rng.coin(0.5);
    c.vflip = rng.coin(0.5);
    return c;
}

namespace {

struct Tap {
    int i0, i1;
    float w1;
};

// Half-pixel bilinear taps over crop-local coordinates, with optional mirror.
// At 1:1 scale the taps degenerate to exact (possibly reversed) index copies.
void crop_taps(int src_n, int offset, int dst_n, bool flip, std::vector<Tap>& taps) {
    taps.resize(std::size_t(dst_n));
    const double scale = double(src_n) / double(dst_n);
    for (int d = 0; d < dst_n; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        if (flip) s = double(src_n - 1) - s;
        double f = std::floor(s);
        int i0 = int(f);
        float w1 = float(s - f);
        int i1 = i0 + 1;
        if (i0 < 0) { i0 = 0; }
        if (i0 > src_n - 1) { i0 = src_n - 1; }
        if (i1 < 0) { i1 = 0; }
        if (i1 > src_n - 1) { i1 = src_n - 1; }
        taps[std::size_t(d)] = {offset + i0, offset + i1, w1};
    }
}

}  // namespace

Image apply_spatial(const Image& tile, const CropSpec& crop) {
    check(crop.w >= 1 && crop.h >= 1 && crop.x0 >= 0 && crop.y0 >= 0 && crop.x0 + crop.w <= tile.width &&
              crop.y0 + crop.h <= tile.height,
          Errc::InvalidCrop, "crop outside tile bounds");

    std::vector<Tap> tx, ty;
    crop_taps(crop.w, crop.x0, kViewSize, crop.hflip, tx);
    crop_taps(crop.h, crop.y0, kViewSize, crop.vflip, ty);

    Image out(kViewSize, kViewSize);
    const bool exact = (crop.w == kViewSize && crop.h == kViewSize);
    for (int y = 0; y < kViewSize; ++y) {
        const Tap& t = ty[std::size_t(y)];
        const std::uint8_t* r0 = tile.data.data() + std::size_t(t.i0) * tile.width * 3;
        const std::uint8_t* r1 = tile.data.data() + std::size_t(t.i1) * tile.width * 3;
        std::uint8_t* dst = out.data.data() + std::size_t(y) * kViewSize * 3;
        if (exact) {
            for (int x = 0; x < kViewSize; ++x)
                for (int c = 0; c < 3; ++c) dst[x * 3 + c] = r0[tx[std::size_t(x)].i0 * 3 + c];
            continue;
        }
        const float wy1 = t.w1, wy0 = 1.0f - t.w1;
        for (int x = 0; x < kViewSize; ++x) {
            const Tap& u = tx[std::size_t(x)];
            const float wx1 = u.w1, wx0 = 1.0f - u.w1;
            for (int c = 0; c < 3; ++c) {
                float top = wx0 * r0[u.i0 * 3 + c] + wx1 * r0[u.i1 * 3 + c];
                float bot = wx0 * r1[u.i0 * 3 + c] + wx1 * r1[u.i1 * 3 + c];
                float v = wy0 * top + wy1 * bot;
                dst[x * 3 + c] = std::uint8_t(std::lround(std::clamp(v, 0.0f, 255.0f)));
            }
        }
    }
    return out;
}

namespace {

using RowMat3 = Eigen::Matrix<float, 3, 3, Eigen::RowMajor>;
using PixArray = Eigen::Array<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Ruifrok-Johnston H&E-DAB stain vectors, rows normalized to unit length.
struct StainBasis {
    RowMat3 m;     // stain -> OD
    RowMat3 minv;  // OD -> stain
    StainBasis() {
        Eigen::Matrix3d raw;
        raw << 0.65, 0.70, 0.29,   // hematoxylin
               0.07, 0.99, 0.11,   // eosin
               0.27, 0.57, 0.78;   // DAB
        for (int i = 0; i < 3; ++i) raw.row(i).normalize();
        Eigen::Matrix3d inv = raw.inverse();
        m = raw.cast<float>();
        minv = inv.cast<float>();
    }
};

const StainBasis& stain_basis() {
    static const StainBasis basis;
    return basis;
}

void hed_perturb(Image& img, const double scale[3], const double shift[3]) {
    const Eigen::Index n = Eigen::Index(img.width) * img.height;
    PixArray v(n, 3);
    for (Eigen::Index i = 0; i < n * 3; ++i) v.data()[i] = float(img.data[std::size_t(i)]);

    // pixel OD = -log(intensity/255); concentrations = OD * Minv (row vectors)
    PixArray od = -((v / 255.0f).max(1e-6f)).log();
    PixArray conc = (od.matrix() * stain_basis().minv.transpose()).array();

    for (int k = 0; k < 3; ++k) {
        float mean_abs = conc.col(k).abs().mean();
        conc.col(k) = conc.col(k) * float(scale[k]) + float(shift[k]) * mean_abs;
    }

    PixArray od2 = (conc.matrix() * stain_basis().m.transpose()).array();
    PixArray out = 255.0f * (-od2).exp();
    for (Eigen::Index i = 0; i < n * 3; ++i) {
        float x = out.data()[i];
        img.data[std::size_t(i)] = std::uint8_t(std::lround(std::clamp(x, 0.0f, 255.0f)));
    }
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(std::size_t(2 * radius + 1));
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        float w = std::exp(float(-0.5 * (double(i) * i) / (sigma * sigma)));
        kernel[std::size_t(i + radius)] = w;
        sum += w;
    }
    for (auto& w : kernel) w /= sum;

    const int W = img.width, H = img.height;
    std::vector<float> tmp(std::size_t(W) * H * 3);
    // horizontal pass, replicate borders
    for (int y = 0; y < H; ++y) {
        const std::uint8_t* src = img.data.data() + std::size_t(y) * W * 3;
        float* dst = tmp.data() + std::size_t(y) * W * 3;
        for (int x = 0; x < W; ++x) {
            float acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                int xx = std::clamp(x + i, 0, W - 1);
                float w = kernel[std::size_t(i + radius)];
                acc[0] += w * src[xx * 3 + 0];
                acc[1] += w * src[xx * 3 + 1];
                acc[2] += w * src[xx * 3 + 2];
            }
            dst[x * 3 + 0] = acc[0];
            dst[x * 3 + 1] = acc[1];
            dst[x * 3 + 2] = acc[2];
        }
    }
    Image out(W, H);
    // vertical pass
    for (int y = 0; y < H; ++y) {
        std::uint8_t* dst = out.data.data() + std::size_t(y) * W * 3;
        for (int x = 0; x < W; ++x) {
            float acc[3] = {0, 0, 0};
            for (int i = -radius; i <= radius; ++i) {
                int yy = std::clamp(y + i, 0, H - 1);
                const float* src = tmp.data() + (std::size_t(yy) * W + std::size_t(x)) * 3;
                float w = kernel[std::size_t(i + radius)];
                acc[0] += w * src[0];
                acc[1] += w * src[1];
                acc[2] += w * src[2];
            }
            for (int c = 0; c < 3; ++c) dst[x * 3 + c] = std::uint8_t(std::lround(std::clamp(acc[c], 0.0f, 255.0f)));
        }
    }
    return out;
}

Image apply_visual(const Image& img, const VisualAugConfig& config, Rng& rng) {
    config.validate();
    if (config.identity()) return img;

    // Fixed draw order: 3 scales, 3 shifts, blur coin, blur sigma.
    double scale[3], shift[3];
    for (int k = 0; k < 3; ++k) scale[k] = rng.uniform(1.0 - config.hed_scale, 1.0 + config.hed_scale);
    for (int k = 0; k < 3; ++k) shift[k] = rng.uniform(-config.hed_shift, config.hed_shift);
    bool do_blur = config.blur_prob > 0.0 && rng.coin(config.blur_prob);
    double sigma = do_blur ? rng.uniform(config.blur_sigma_min, config.blur_sigma_max) : 0.0;

    Image out = img;
    if (config.hed_scale > 0.0 || config.hed_shift > 0.0) hed_perturb(out, scale, shift);
    if (do_blur) out = gaussian_blur(out, sigma);
    return out;
}

ViewSet make_training_views(const Image& tile, int n_teachers, const VisualAugConfig& config, Rng rng) {
    check(tile.width >= kViewSize && tile.height >= kViewSize, Errc::InvalidSize, "tile smaller than 224x224");
    check(n_teachers >= 0, Errc::ConfigError, "n_teachers must be >= 0");
    const int n_models = 1 + n_teachers;

    ViewSet vs;
    vs.model_ids.push_back("student");
    for (int t = 0; t < n_teachers; ++t) vs.model_ids.push_back("t" + std::to_string(t));

    Rng crop_rng = rng.fork("aligned_crop");
    vs.aligned_crop = sample_crop(tile.width, tile.height, crop_rng);
    Image aligned_base = apply_spatial(tile, vs.aligned_crop);
    for (int i = 0; i < n_models; ++i) {
        Rng vis = rng.fork(0x100u + std::uint64_t(i));
        vs.aligned.push_back(apply_visual(aligned_base, config, vis));
    }
    for (int i = 0; i < n_models; ++i) {
        Rng crng = rng.fork(0x200u + std::uint64_t(i));
        CropSpec cs = sample_crop(tile.width, tile.height, crng);
        Rng vis = rng.fork(0x300u + std::uint64_t(i));
        vs.nonaligned.push_back(apply_visual(apply_spatial(tile, cs), config, vis));
    }
    return vs;
}

}  // namespace pathryoshka
