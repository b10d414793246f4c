#include <doctest.h>

#include <cmath>
#include <set>

#include "pathryoshka/common.hpp"
#include "pathryoshka/heads.hpp"
#include "pathryoshka/tape.hpp"

using namespace pathryoshka;

namespace {

MatF randm(int r, int c, std::uint64_t seed) {
    Rng rng(seed);
    MatF m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = float(rng.normal());
    return m;
}

HeadBank small_bank(std::uint64_t seed = 3) {
    return build_head_bank<float>(16, {"ta", "tb"}, {8, 12}, nesting_levels(16, 3), seed);
}

}  // namespace

TEST_CASE("halving produces the canonical level ladders") {
    CHECK(nesting_levels(768, 5).levels == std::vector<int>{768, 384, 192, 96, 48});
    CHECK(nesting_levels(96, 5).levels == std::vector<int>{96, 48, 24, 12, 6});
    CHECK(nesting_levels(64, 5).levels == std::vector<int>{64, 32, 16, 8, 4});
    CHECK(nesting_levels(16, 5).levels == std::vector<int>{16, 8, 4, 2, 1});
    CHECK(nesting_levels(96, 1).levels == std::vector<int>{96});
}

TEST_CASE("halving rejects widths too small for the requested depth") {
    CHECK_THROWS_AS(nesting_levels(8, 5), Error);
    CHECK_THROWS_AS(nesting_levels(96, 0), Error);
    CHECK_NOTHROW(nesting_levels(16, 5));
}

TEST_CASE("level validation demands a strict descent") {
    NestingLevels bad;
    bad.levels = {16, 16, 8};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.levels = {16, 8, 0};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.levels = {};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("bank layout enumerates every (teacher, level, kind) once") {
    HeadBank bank = small_bank();
    CHECK(bank.n_heads() == 2 * 3 * 2);

    std::set<std::string> keys;
    bank.visit([&](const std::string& name, MatF&) { keys.insert(name); });
    CHECK(keys.size() == 2 * 3 * 2 * 6);
    CHECK(keys.count("head/ta/cls/16/w1") == 1);
    CHECK(keys.count("head/ta/patch/4/b3") == 1);
    CHECK(keys.count("head/tb/cls/8/w2") == 1);
}

TEST_CASE("head shapes follow their level and teacher dim") {
    HeadBank bank = small_bank();
    const auto& h = bank.head(bank.teacher_index("tb"), bank.level_index(8), HeadKind::patch);
    CHECK(h.w1.rows() == 8);
    CHECK(h.w1.cols() == 12);
    CHECK(h.w2.rows() == 12);
    CHECK(h.w3.cols() == 12);
    CHECK(h.b3.cols() == 12);
}

TEST_CASE("bank construction is deterministic and seed-sensitive") {
    CHECK(small_bank(3).checksum() == small_bank(3).checksum());
    CHECK(small_bank(3).checksum() != small_bank(4).checksum());
}

TEST_CASE("bank construction rejects inconsistent arguments") {
    CHECK_THROWS_AS(build_head_bank<float>(16, {"a"}, {8, 8}, nesting_levels(16, 2), 1), Error);
    CHECK_THROWS_AS(build_head_bank<float>(16, {}, {}, nesting_levels(16, 2), 1), Error);
    // The ladder must start at the student width.
    CHECK_THROWS_AS(build_head_bank<float>(32, {"a"}, {8}, nesting_levels(16, 2), 1), Error);
}

TEST_CASE("unknown teachers and levels raise key errors") {
    HeadBank bank = small_bank();
    VecS<float> cls = randm(16, 1, 5).col(0);
    CHECK_THROWS_AS(project_cls(bank, cls, "nobody", 16), Error);
    CHECK_THROWS_AS(project_cls(bank, cls, "ta", 5), Error);
}

TEST_CASE("head forward matches an independent double-precision evaluation") {
    HeadBank bank = small_bank();
    const auto& h = bank.head(0, 1, HeadKind::cls);  // level 8, teacher ta (dim 8)
    MatF x = randm(3, 8, 6);
    MatF got = head_forward(h, x);

    auto silu = [](const Eigen::MatrixXd& v) {
        return ((v.array() / (1.0 + (-v.array()).exp()))).matrix().eval();
    };
    Eigen::MatrixXd xd = x.cast<double>();
    Eigen::MatrixXd a = silu((xd * h.w1.cast<double>()).rowwise() + h.b1.row(0).cast<double>());
    Eigen::MatrixXd b = silu((a * h.w2.cast<double>()).rowwise() + h.b2.row(0).cast<double>());
    Eigen::MatrixXd c = (b * h.w3.cast<double>()).rowwise() + h.b3.row(0).cast<double>();

    CHECK((got.cast<double>() - c).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("cls projection consumes exactly the first m components") {
    HeadBank bank = small_bank();
    VecS<float> cls = randm(16, 1, 7).col(0);
    for (int m : bank.levels.levels) {
        VecS<float> base = project_cls(bank, cls, "ta", m);
        // Slicing by hand and calling the head directly must agree.
        MatF x = cls.transpose().leftCols(m);
        MatF direct = head_forward(bank.head(0, bank.level_index(m), HeadKind::cls), x);
        CHECK((base.transpose() - direct.row(0)).cwiseAbs().maxCoeff() == 0.0f);

        // Components beyond m are dead: randomize them and nothing moves.
        VecS<float> tail = cls;
        for (int i = m; i < tail.size(); ++i) tail(i) += 100.0f + float(i);
        VecS<float> moved = project_cls(bank, tail, "ta", m);
        CHECK((moved - base).cwiseAbs().maxCoeff() == 0.0f);
    }
}

TEST_CASE("patch projection is tokenwise over the prefix") {
    HeadBank bank = small_bank();
    MatF patches = randm(6, 16, 8);
    MatF full = project_patches(bank, patches, "tb", 4);
    CHECK(full.rows() == 6);
    CHECK(full.cols() == 12);
    // Projecting rows one at a time gives the same answers.
    for (int r = 0; r < 6; ++r) {
        MatF one = project_patches(bank, MatF(patches.row(r)), "tb", 4);
        CHECK((one.row(0) - full.row(r)).cwiseAbs().maxCoeff() < 1e-6f);
    }
}

TEST_CASE("projection rejects inputs shorter than the level") {
    HeadBank bank = small_bank();
    VecS<float> cls = randm(4, 1, 9).col(0);
    CHECK_THROWS_AS(project_cls(bank, cls, "ta", 8), Error);
}

TEST_CASE("tape head forward agrees with the direct head forward") {
    HeadBank bank = small_bank();
    MatF x = randm(5, 16, 10);

    Tape<float> tape;
    LeafMap<float> map;
    push_head_leaves(tape, bank, map, true);
    int input = tape.leaf(x, false);
    int node = head_tape_forward(tape, bank, map, input, "tb", 8, HeadKind::patch);

    MatF direct = project_patches(bank, x, "tb", 8);
    CHECK((tape.val(node) - direct).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("tape head forward trains its own parameters only") {
    HeadBank bank = small_bank();
    MatF x = randm(4, 16, 11);
    Tape<float> tape;
    LeafMap<float> map;
    push_head_leaves(tape, bank, map, true);
    int input = tape.leaf(x, false);
    int node = head_tape_forward(tape, bank, map, input, "ta", 16, HeadKind::cls);
    int loss = tape.mse_loss_mean(node, MatF::Zero(4, 8));
    tape.backward(loss);

    CHECK(tape.grad_of(map.at("head/ta/cls/16/w1")).cwiseAbs().maxCoeff() > 0.0f);
    CHECK(tape.grad_of(map.at("head/ta/cls/8/w1")).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(tape.grad_of(map.at("head/tb/cls/16/w1")).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(tape.grad_of(map.at("head/ta/patch/16/w1")).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("bank casts between scalar types losslessly enough") {
    HeadBank bank = small_bank();
    auto dbank = bank.cast<double>();
    auto back = dbank.cast<float>();
    CHECK(back.checksum() == bank.checksum());
}
