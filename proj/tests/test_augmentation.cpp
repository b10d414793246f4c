#include <doctest.h>

#include <cmath>
#include <set>

#include "pathryoshka/augmentation.hpp"
#include "pathryoshka/common.hpp"
#include "pathryoshka/image.hpp"

using namespace pathryoshka;

namespace {

Image noise_tile(int size, std::uint64_t seed) {
    Image img(size, size);
    Rng rng(seed);
    for (auto& p : img.data) p = std::uint8_t(rng.uniform_u64(256));
    return img;
}

double pixel_variance(const Image& img) {
    double s1 = 0.0, s2 = 0.0;
    for (auto p : img.data) {
        s1 += p;
        s2 += double(p) * p;
    }
    double n = double(img.data.size());
    double mean = s1 / n;
    return s2 / n - mean * mean;
}

}  // namespace

TEST_CASE("crop sampler respects area, aspect, and bounds") {
    Rng rng(123);
    const int W = 256, H = 256;
    double area_sum = 0.0;
    int flips = 0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
        CropSpec c = sample_crop(W, H, rng);
        REQUIRE(c.x0 >= 0);
        REQUIRE(c.y0 >= 0);
        REQUIRE(c.x0 + c.w <= W);
        REQUIRE(c.y0 + c.h <= H);
        double af = double(c.w) * c.h / (double(W) * H);
        REQUIRE(af >= 0.25 - 1e-9);
        REQUIRE(af <= 1.0 + 1e-9);
        double ar = (double(c.w) / c.h) * (double(H) / W);
        REQUIRE(ar >= 0.9 - 0.02);  // rounding slack on integer sides
        REQUIRE(ar <= 1.1 + 0.02);
        area_sum += af;
        flips += c.hflip ? 1 : 0;
    }
    // Area fraction is uniform on [0.25, 1]: the Monte Carlo mean must sit
    // near 0.625.
    CHECK(area_sum / n == doctest::Approx(0.625).epsilon(0.04));
    CHECK(double(flips) / n == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("crop sampler rejects undersized sources") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_crop(100, 256, rng), Error);
}

TEST_CASE("exact-size crop is a pixel passthrough") {
    Image tile = noise_tile(256, 1);
    CropSpec c;
    c.x0 = 10;
    c.y0 = 20;
    c.w = kViewSize;
    c.h = kViewSize;
    Image out = apply_spatial(tile, c);
    REQUIRE(out.width == kViewSize);
    REQUIRE(out.height == kViewSize);
    for (int y = 0; y < kViewSize; ++y)
        for (int x = 0; x < kViewSize; ++x)
            for (int ch = 0; ch < 3; ++ch) REQUIRE(out.px(x, y)[ch] == tile.px(c.x0 + x, c.y0 + y)[ch]);
}

TEST_CASE("horizontal flip mirrors columns exactly at 1:1 scale") {
    Image tile = noise_tile(256, 2);
    CropSpec c;
    c.x0 = 5;
    c.y0 = 7;
    c.w = kViewSize;
    c.h = kViewSize;
    c.hflip = true;
    Image out = apply_spatial(tile, c);
    for (int y = 0; y < kViewSize; ++y)
        for (int x = 0; x < kViewSize; ++x)
            REQUIRE(out.px(x, y)[0] == tile.px(c.x0 + (kViewSize - 1 - x), c.y0 + y)[0]);
}

TEST_CASE("vertical flip mirrors rows exactly at 1:1 scale") {
    Image tile = noise_tile(256, 3);
    CropSpec c;
    c.x0 = 0;
    c.y0 = 0;
    c.w = kViewSize;
    c.h = kViewSize;
    c.vflip = true;
    Image out = apply_spatial(tile, c);
    for (int x = 0; x < kViewSize; ++x) REQUIRE(out.px(x, 0)[2] == tile.px(x, kViewSize - 1)[2]);
}

TEST_CASE("out-of-bounds crops are rejected") {
    Image tile = noise_tile(256, 4);
    CropSpec c;
    c.x0 = 200;
    c.y0 = 0;
    c.w = 100;
    c.h = 100;
    CHECK_THROWS_AS(apply_spatial(tile, c), Error);
}

TEST_CASE("spatial resampling keeps constants constant") {
    Image tile(256, 256);
    std::fill(tile.data.begin(), tile.data.end(), std::uint8_t(201));
    CropSpec c;
    c.x0 = 3;
    c.y0 = 9;
    c.w = 181;
    c.h = 247;
    Image out = apply_spatial(tile, c);
    for (auto p : out.data) REQUIRE(int(p) == 201);
}

TEST_CASE("disabled visual config is a strict identity") {
    VisualAugConfig cfg = VisualAugConfig::disabled();
    CHECK(cfg.identity());
    Image img = noise_tile(64, 5);
    Rng rng(1);
    Image out = apply_visual(img, cfg, rng);
    CHECK(out.data == img.data);
}

TEST_CASE("visual config validation rejects bad ranges") {
    VisualAugConfig cfg;
    cfg.blur_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = VisualAugConfig{};
    cfg.hed_scale = -0.1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = VisualAugConfig{};
    cfg.blur_sigma_min = 2.0;
    cfg.blur_sigma_max = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("stain perturbation leaves pure white fixed") {
    // White has zero optical density in every stain channel, and the shift is
    // relative to the mean absolute concentration, so white must stay white.
    Image white(32, 32);
    std::fill(white.data.begin(), white.data.end(), std::uint8_t(255));
    VisualAugConfig cfg;
    cfg.hed_scale = 0.5;
    cfg.hed_shift = 0.5;
    cfg.blur_prob = 0.0;
    Rng rng(77);
    Image out = apply_visual(white, cfg, rng);
    for (auto p : out.data) CHECK(int(p) >= 253);
}

TEST_CASE("stain perturbation actually moves stained pixels") {
    Image img(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            img.px(x, y)[0] = 180;  // pinkish H&E-like tone
            img.px(x, y)[1] = 120;
            img.px(x, y)[2] = 160;
        }
    VisualAugConfig cfg;
    cfg.hed_scale = 0.3;
    cfg.hed_shift = 0.0;
    cfg.blur_prob = 0.0;
    Rng rng(3);
    Image out = apply_visual(img, cfg, rng);
    CHECK(out.data != img.data);
}

TEST_CASE("gaussian blur reduces noise variance and keeps constants") {
    Image noisy = noise_tile(64, 6);
    Image blurred = gaussian_blur(noisy, 1.5);
    CHECK(pixel_variance(blurred) < 0.5 * pixel_variance(noisy));

    Image flat(64, 64);
    std::fill(flat.data.begin(), flat.data.end(), std::uint8_t(90));
    Image out = gaussian_blur(flat, 2.0);
    for (auto p : out.data) REQUIRE(std::abs(int(p) - 90) <= 1);
}

TEST_CASE("training views are deterministic in the rng") {
    Image tile = noise_tile(256, 7);
    VisualAugConfig cfg;
    ViewSet a = make_training_views(tile, 2, cfg, Rng(42));
    ViewSet b = make_training_views(tile, 2, cfg, Rng(42));
    REQUIRE(a.aligned.size() == 3);
    REQUIRE(a.nonaligned.size() == 3);
    for (std::size_t i = 0; i < a.aligned.size(); ++i) {
        CHECK(a.aligned[i].checksum() == b.aligned[i].checksum());
        CHECK(a.nonaligned[i].checksum() == b.nonaligned[i].checksum());
    }
    ViewSet c = make_training_views(tile, 2, cfg, Rng(43));
    CHECK(a.aligned[0].checksum() != c.aligned[0].checksum());
}

TEST_CASE("view set names models in order") {
    Image tile = noise_tile(256, 8);
    ViewSet vs = make_training_views(tile, 2, VisualAugConfig::disabled(), Rng(1));
    REQUIRE(vs.model_ids.size() == 3);
    CHECK(vs.model_ids[0] == "student");
    CHECK(vs.model_ids[1] == "t0");
    CHECK(vs.model_ids[2] == "t1");
}

TEST_CASE("aligned views share geometry across models") {
    // With photometric augs off, the aligned views must be pixel-identical:
    // that is what makes the dense patch loss between them well-posed.
    Image tile = noise_tile(256, 9);
    ViewSet vs = make_training_views(tile, 2, VisualAugConfig::disabled(), Rng(5));
    CHECK(vs.aligned[0].data == vs.aligned[1].data);
    CHECK(vs.aligned[0].data == vs.aligned[2].data);
    CHECK(vs.aligned[0].checksum() == apply_spatial(tile, vs.aligned_crop).checksum());
}

TEST_CASE("non-aligned views differ from the aligned crop") {
    Image tile = noise_tile(256, 10);
    int differing = 0;
    for (std::uint64_t s = 0; s < 8; ++s) {
        ViewSet vs = make_training_views(tile, 1, VisualAugConfig::disabled(), Rng(s));
        if (vs.nonaligned[0].checksum() != vs.aligned[0].checksum()) ++differing;
    }
    CHECK(differing >= 7);
}

TEST_CASE("aligned views differ photometrically when augs are on") {
    Image tile = noise_tile(256, 11);
    VisualAugConfig cfg;
    cfg.hed_scale = 0.3;
    cfg.hed_shift = 0.1;
    cfg.blur_prob = 0.0;
    int differing = 0;
    for (std::uint64_t s = 0; s < 6; ++s) {
        ViewSet vs = make_training_views(tile, 1, cfg, Rng(s));
        if (vs.aligned[0].data != vs.aligned[1].data) ++differing;
    }
    // Each model draws its own photometric parameters on the shared crop.
    CHECK(differing >= 5);
}

TEST_CASE("undersized tiles are rejected for view making") {
    Image small = noise_tile(128, 12);
    CHECK_THROWS_AS(make_training_views(small, 1, VisualAugConfig{}, Rng(1)), Error);
}
