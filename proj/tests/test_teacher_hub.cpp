#include <doctest.h>

#include <cmath>

#include "pathryoshka/common.hpp"
#include "pathryoshka/image.hpp"
#include "pathryoshka/teacher_hub.hpp"

using namespace pathryoshka;

namespace {

Image random_image(int size, std::uint64_t seed) {
    Image img(size, size);
    Rng rng(seed);
    for (auto& p : img.data) p = std::uint8_t(rng.uniform_u64(256));
    return img;
}

MatF randm(int r, int c, std::uint64_t seed) {
    Rng rng(seed);
    MatF m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = float(rng.normal());
    return m;
}

double cosine(const Eigen::RowVectorXf& a, const Eigen::RowVectorXf& b) {
    return a.dot(b) / (a.norm() * b.norm() + 1e-12);
}

}  // namespace

TEST_CASE("synthetic teacher specs validate") {
    TeacherSpec s = make_synthetic_teacher(1, 64, 16);
    CHECK(s.dim == 64);
    CHECK(s.grid == 16);
    CHECK(s.loader == "synthetic");
    s.validate();

    TeacherSpec bad = s;
    bad.dim = 4;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = s;
    bad.name.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("synthetic teachers are deterministic and seed-distinct") {
    Teacher a = load_teacher(make_synthetic_teacher(5, 32, 8));
    Teacher b = load_teacher(make_synthetic_teacher(5, 32, 8));
    Teacher c = load_teacher(make_synthetic_teacher(6, 32, 8));
    CHECK(a.param_checksum() == b.param_checksum());
    CHECK(a.param_checksum() != c.param_checksum());
}

TEST_CASE("distinct teachers produce decorrelated features") {
    Teacher a = load_teacher(make_synthetic_teacher(1, 32, 8));
    Teacher b = load_teacher(make_synthetic_teacher(2, 32, 8));
    Image img = random_image(224, 3);
    std::vector<const Image*> views{&img};
    BatchTokens fa = a.forward(views);
    BatchTokens fb = b.forward(views);
    CHECK(std::abs(cosine(fa.cls.row(0), fb.cls.row(0))) < 0.99);
}

TEST_CASE("teacher forward is frozen and repeatable") {
    Teacher t = load_teacher(make_synthetic_teacher(9, 16, 4));
    Image img = random_image(224, 4);
    std::vector<const Image*> views{&img};
    BatchTokens f1 = t.forward(views);
    BatchTokens f2 = t.forward(views);
    CHECK((f1.cls - f2.cls).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((f1.patches - f2.patches).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("teacher outputs have the spec'd shapes") {
    Teacher t = load_teacher(make_synthetic_teacher(7, 24, 4));
    Image i1 = random_image(224, 5), i2 = random_image(224, 6);
    std::vector<const Image*> views{&i1, &i2};
    BatchTokens out = t.forward(views);
    CHECK(out.batch == 2);
    CHECK(out.cls.rows() == 2);
    CHECK(out.cls.cols() == 24);
    CHECK(out.patches.rows() == 2 * 16);
    CHECK(out.patches.cols() == 24);
    CHECK(out.grid == 4);

    TokenBundle one = t.forward_one(i1);
    CHECK((one.cls - out.cls.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("unknown loaders are refused, registered loaders are used") {
    TeacherSpec spec = make_synthetic_teacher(1, 16, 4);
    spec.loader = "no_such_loader";
    CHECK_THROWS_AS(load_teacher(spec), Error);

    register_teacher_loader("test_fixture_loader", [](const TeacherSpec& s) {
        BackboneConfig cfg;
        cfg.depth = 1;
        cfg.width = s.dim;
        cfg.heads = 2;
        cfg.patch_size = 224 / s.grid;
        cfg.image_size = 224;
        cfg.registers = 0;
        VitParams p = build_vit<float>(cfg, 999);
        p.prep = s.preprocessing;
        return p;
    });
    spec.loader = "test_fixture_loader";
    Teacher t = load_teacher(spec);
    CHECK(t.spec().loader == "test_fixture_loader");
    Image img = random_image(224, 7);
    std::vector<const Image*> views{&img};
    CHECK(t.forward(views).cls.cols() == 16);
}

TEST_CASE("grid resampling is the identity at equal grids") {
    MatF patches = randm(16, 8, 10);  // one image on a 4x4 grid
    MatF out = resample_patch_grid(patches, 4, 4);
    CHECK((out - patches).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("grid resampling to 1x1 averages all tokens") {
    // A single output samples the grid center, so with a 2x2 source all four
    // tokens contribute equally.
    MatF patches(4, 3);
    patches << 1, 0, 0, 3, 0, 0, 5, 0, 0, 7, 0, 0;
    MatF out = resample_patch_grid(patches, 2, 1);
    REQUIRE(out.rows() == 1);
    CHECK(out(0, 0) == doctest::Approx(4.0f));
}

TEST_CASE("grid resampling upsamples constants to constants") {
    MatF patches = MatF::Constant(4, 5, 2.5f);
    MatF out = resample_patch_grid(patches, 2, 3);
    REQUIRE(out.rows() == 9);
    CHECK((out.array() - 2.5f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("grid resampling 2x2 to 3x3 keeps corners fixed") {
    MatF patches(4, 1);
    patches << 0, 2, 4, 6;  // row-major 2x2: [[0,2],[4,6]]
    MatF out = resample_patch_grid(patches, 2, 3);
    REQUIRE(out.rows() == 9);
    // Align-corners mapping: the four source corners are fixed points.
    CHECK(out(0, 0) == doctest::Approx(0.0f));
    CHECK(out(2, 0) == doctest::Approx(2.0f));
    CHECK(out(6, 0) == doctest::Approx(4.0f));
    CHECK(out(8, 0) == doctest::Approx(6.0f));
    // The middle output cell samples the grid center: mean of all four.
    CHECK(out(4, 0) == doctest::Approx(3.0f));
    // The center of the top edge blends the top two tokens equally.
    CHECK(out(1, 0) == doctest::Approx(1.0f));
}

TEST_CASE("grid resampling is linear in its input") {
    MatF x = randm(9, 4, 11), y = randm(9, 4, 12);
    MatF lhs = resample_patch_grid((2.0f * x + 3.0f * y).eval(), 3, 5);
    MatF rhs = 2.0f * resample_patch_grid(x, 3, 5) + 3.0f * resample_patch_grid(y, 3, 5);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("grid resampling is strictly per-image") {
    // Callers resample one image's tokens at a time; stacked batches must be
    // rejected rather than silently blended across image boundaries.
    MatF stacked = randm(8, 3, 13);  // two 2x2 images worth of rows
    CHECK_THROWS_AS(resample_patch_grid(stacked, 2, 3), Error);
    MatF off_grid = randm(5, 3, 15);
    CHECK_THROWS_AS(resample_patch_grid(off_grid, 2, 3), Error);
}

TEST_CASE("standardization zeroes means and unitizes scales") {
    MatF rows = randm(500, 12, 16);
    rows.array() *= 3.0f;
    rows.array() += 7.0f;
    StandardizationStats stats = compute_batch_stats(rows);
    MatF z = rows;
    standardize_patch_tokens(z, stats);
    for (int c = 0; c < z.cols(); ++c) {
        double mean = z.col(c).cast<double>().mean();
        double var = (z.col(c).cast<double>().array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);
    }
}

TEST_CASE("standardization cancels per-channel affine rescaling") {
    MatF rows = randm(300, 6, 17);
    MatF scaled = rows;
    for (int c = 0; c < scaled.cols(); ++c)
        scaled.col(c) = (rows.col(c).array() * float(1 + c) + float(10 * c)).matrix();

    MatF za = rows, zb = scaled;
    standardize_patch_tokens(za, compute_batch_stats(rows));
    standardize_patch_tokens(zb, compute_batch_stats(scaled));
    CHECK((za - zb).cwiseAbs().maxCoeff() < 1e-3f);
}

TEST_CASE("standardizing a constant channel stays finite") {
    MatF rows = randm(100, 3, 18);
    rows.col(1).setConstant(4.0f);
    StandardizationStats stats = compute_batch_stats(rows);
    MatF z = rows;
    standardize_patch_tokens(z, stats);
    CHECK(z.allFinite());
    CHECK(z.col(1).cwiseAbs().maxCoeff() < 1e-2f);
}
