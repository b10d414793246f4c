#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pathryoshka/eval.hpp"

using namespace pathryoshka;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code;
    }
    FAIL("expected a pathryoshka::Error");
    return Errc::ConfigError;
}

// Independent k-NN: same documented contract, straight-line implementation.
// Sims in double over L2-normalized prefix rows; neighbor order (sim desc,
// index asc); vote ties by (count desc, summed 1-cos asc, label asc).
double naive_knn(const EmbeddingSet& train, const EmbeddingSet& test, int k, int m) {
    MatD tr = train.vectors.leftCols(m).cast<double>();
    MatD te = test.vectors.leftCols(m).cast<double>();
    for (Eigen::Index i = 0; i < tr.rows(); ++i) {
        double n = tr.row(i).norm();
        if (n > 0) tr.row(i) /= n;
    }
    for (Eigen::Index i = 0; i < te.rows(); ++i) {
        double n = te.row(i).norm();
        if (n > 0) te.row(i) /= n;
    }
    int correct = 0;
    for (int i = 0; i < test.size(); ++i) {
        std::vector<std::pair<double, int>> sims;
        for (int j = 0; j < train.size(); ++j) sims.push_back({te.row(i).dot(tr.row(j)), j});
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::map<int, std::pair<int, double>> votes;  // label -> (count, dist)
        for (int j = 0; j < k; ++j) {
            auto& v = votes[train.labels[std::size_t(sims[std::size_t(j)].second)]];
            v.first += 1;
            v.second += 1.0 - sims[std::size_t(j)].first;
        }
        int best_label = -1;
        std::pair<int, double> best{-1, 0.0};
        for (const auto& [label, v] : votes) {
            if (v.first > best.first || (v.first == best.first && v.second < best.second)) {
                best = v;
                best_label = label;
            }
        }
        if (best_label == test.labels[std::size_t(i)]) ++correct;
    }
    return double(correct) / double(test.size());
}

EmbeddingSet rows_set(const MatF& v, std::vector<int> labels, std::vector<std::string> sources) {
    EmbeddingSet s;
    s.vectors = v;
    s.labels = std::move(labels);
    s.source_ids = std::move(sources);
    s.model_id = "fixture";
    return s;
}

// The gaussian fixture derives class means from the seed, so train and test
// sets must come from one draw; labels cycle, so a row split covers every
// class on both sides.
std::pair<EmbeddingSet, EmbeddingSet> split_rows(const EmbeddingSet& all, int n_train) {
    EmbeddingSet train, test;
    train.model_id = test.model_id = all.model_id;
    const int n = int(all.size());
    train.vectors = all.vectors.topRows(n_train);
    test.vectors = all.vectors.bottomRows(n - n_train);
    for (int i = 0; i < n; ++i) {
        EmbeddingSet& half = i < n_train ? train : test;
        half.labels.push_back(all.labels[i]);
        half.source_ids.push_back(all.source_ids[i]);
    }
    return {train, test};
}

}  // namespace

TEST_CASE("gaussian fixture has the advertised shape and is seed-deterministic") {
    EmbeddingSet e = make_gaussian_embeddings(30, 8, 3, 4);
    CHECK(e.size() == 30);
    CHECK(e.dim() == 8);
    CHECK(e.labels.size() == 30);
    CHECK(e.source_ids.size() == 30);
    CHECK(e.has_labels());
    std::set<int> classes(e.labels.begin(), e.labels.end());
    CHECK(classes == std::set<int>{0, 1, 2});
    std::set<std::string> ids(e.source_ids.begin(), e.source_ids.end());
    CHECK(ids.size() == 30);

    EmbeddingSet e2 = make_gaussian_embeddings(30, 8, 3, 4);
    CHECK(e.vectors == e2.vectors);
    EmbeddingSet e3 = make_gaussian_embeddings(30, 8, 3, 5);
    CHECK(e.vectors != e3.vectors);
}

TEST_CASE("knn matches an independent oracle on every prefix and k") {
    EmbeddingSet train = make_gaussian_embeddings(80, 16, 3, 21, 2.0);
    EmbeddingSet test = make_gaussian_embeddings(40, 16, 3, 22, 2.0);
    for (int k : {1, 3, 10}) {
        for (int m : {16, 8, 4, 2, 1}) {
            CAPTURE(k);
            CAPTURE(m);
            CHECK(knn_classify(train, test, k, m) == naive_knn(train, test, k, m));
        }
    }
}

TEST_CASE("knn separates well-spaced blobs") {
    auto [train, test] = split_rows(make_gaussian_embeddings(135, 12, 3, 31, 5.0), 90);
    CHECK(knn_classify(train, test, 5, 12) >= 0.9);
}

TEST_CASE("knn neighbor ties resolve by train index, vote ties by distance then label") {
    MatF e0(1, 4);
    e0 << 1, 0, 0, 0;

    // Two identical train rows: index order decides the 1-NN.
    MatF tr(2, 4);
    tr << 1, 0, 0, 0, 1, 0, 0, 0;
    EmbeddingSet train = rows_set(tr, {5, 2}, {"a", "b"});
    EmbeddingSet test = rows_set(e0, {5}, {"q"});
    CHECK(knn_classify(train, test, 1, 4) == 1.0);  // picks index 0, label 5
    EmbeddingSet test2 = rows_set(e0, {2}, {"q"});
    CHECK(knn_classify(train, test2, 1, 4) == 0.0);

    // k=2 vote tie, one neighbor nearer: summed distance decides.
    MatF tr2(2, 4);
    tr2 << 1, 0, 0, 0, 0, 1, 0, 0;
    MatF q(1, 4);
    q << 2, 1, 0, 0;
    EmbeddingSet train2 = rows_set(tr2, {0, 1}, {"a", "b"});
    CHECK(knn_classify(train2, rows_set(q, {0}, {"q"}), 2, 4) == 1.0);
    CHECK(knn_classify(train2, rows_set(q, {1}, {"q"}), 2, 4) == 0.0);

    // Full tie (equal count, equal distance): lowest label wins.
    EmbeddingSet train3 = rows_set(tr, {7, 3}, {"a", "b"});
    CHECK(knn_classify(train3, rows_set(e0, {3}, {"q"}), 2, 4) == 1.0);
}

TEST_CASE("knn guards its arguments") {
    EmbeddingSet train = make_gaussian_embeddings(10, 4, 2, 1);
    EmbeddingSet test = make_gaussian_embeddings(5, 4, 2, 2);
    CHECK(code_of([&] { knn_classify(train, test, 0, 4); }) == Errc::InvalidK);
    CHECK(code_of([&] { knn_classify(train, test, 11, 4); }) == Errc::InvalidK);
    CHECK(code_of([&] { knn_classify(train, test, 1, 0); }) == Errc::InvalidDim);
    CHECK(code_of([&] { knn_classify(train, test, 1, 5); }) == Errc::InvalidDim);
    EmbeddingSet unlabeled = train;
    unlabeled.labels.clear();
    CHECK(code_of([&] { knn_classify(unlabeled, test, 1, 4); }) == Errc::ConfigError);
    EmbeddingSet wide = make_gaussian_embeddings(10, 8, 2, 1);
    CHECK(code_of([&] { knn_classify(train, wide, 1, 4); }) == Errc::ShapeError);
    EmbeddingSet empty;
    CHECK(code_of([&] { knn_classify(empty, test, 1, 4); }) == Errc::EmptyDataset);
}

TEST_CASE("random coordinate subsets at full width reduce to the prefix knn") {
    EmbeddingSet train = make_gaussian_embeddings(40, 8, 2, 11);
    EmbeddingSet test = make_gaussian_embeddings(20, 8, 2, 12);
    ProbeResult r = random_subset_baseline(train, test, 3, 8, 4, 9);
    CHECK(r.runs.size() == 4);
    // Cosine similarity is invariant to coordinate permutation, and a size-d
    // subset of d coordinates is all of them.
    double prefix = knn_classify(train, test, 3, 8);
    CHECK(r.mean == doctest::Approx(prefix).epsilon(1e-12));
    CHECK(r.stdev == 0.0);

    ProbeResult sub = random_subset_baseline(train, test, 3, 2, 5, 9);
    CHECK(sub.runs.size() == 5);
    for (double v : sub.runs) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    ProbeResult again = random_subset_baseline(train, test, 3, 2, 5, 9);
    CHECK(sub.runs == again.runs);
}

TEST_CASE("linear probe learns separable blobs and reports the right metric") {
    auto [train, test] = split_rows(make_gaussian_embeddings(135, 8, 3, 41, 4.0), 90);
    ProbeResult r = linear_probe(train, test, 150, 2, 0);
    CHECK(r.metric == "linear_probe_acc");
    CHECK(r.mean >= 0.9);
    CHECK(r.runs.size() == 2);

    auto [btrain, btest] = split_rows(make_gaussian_embeddings(90, 8, 2, 43, 4.0), 60);
    ProbeResult b = linear_probe(btrain, btest, 150, 2, 0);
    CHECK(b.metric == "linear_probe_balanced_acc");
    CHECK(b.mean >= 0.9);
}

TEST_CASE("binary probe reports balanced accuracy, not plain accuracy") {
    // Indistinguishable classes with a 9:1 skew in both splits. A probe that
    // degenerates to the majority class scores ~0.9 plain accuracy but ~0.5
    // balanced accuracy; the reported number must be the balanced one.
    Rng rng(77);
    auto noise_set = [&](int n0, int n1) {
        MatF v(n0 + n1, 6);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = float(rng.normal());
        std::vector<int> labels;
        std::vector<std::string> ids;
        for (int i = 0; i < n0 + n1; ++i) {
            labels.push_back(i < n0 ? 0 : 1);
            ids.push_back("n" + std::to_string(i));
        }
        return rows_set(v, std::move(labels), std::move(ids));
    };
    EmbeddingSet train = noise_set(90, 10);
    EmbeddingSet test = noise_set(45, 5);
    ProbeResult r = linear_probe(train, test, 100, 3, 0);
    CHECK(r.metric == "linear_probe_balanced_acc");
    CHECK(r.mean <= 0.75);
}

TEST_CASE("linear probe refuses a single-class train set") {
    EmbeddingSet train = make_gaussian_embeddings(20, 4, 1, 51);
    EmbeddingSet test = make_gaussian_embeddings(10, 4, 1, 52);
    CHECK(code_of([&] { linear_probe(train, test); }) == Errc::DegenerateLabels);
}

TEST_CASE("retrieval excludes the query's own source") {
    MatF g(4, 4);
    g << 1, 0, 0, 0,          // g0: label 0, source A (same tile as the query)
        0.9f, 0.1f, 0, 0,     // g1: label 1, source B (near miss)
        1, 1, 0, 0,           // g2: label 0, source C (the legitimate match)
        0, 0, 1, 0;           // g3: label 1, source B
    EmbeddingSet gallery = rows_set(g, {0, 1, 0, 1}, {"A", "B", "C", "B"});

    MatF q(2, 4);
    q << 1, 0, 0, 0,  // label 0, source A
        0, 0, 1, 0;   // label 1, source Z
    EmbeddingSet queries = rows_set(q, {0, 1}, {"A", "Z"});

    // Query 0: g0 is masked out; its best same-label row g2 (cos ~ 0.707)
    // sits behind g1 (cos ~ 0.994), so it needs K >= 2. Query 1 hits g3 at
    // rank 0. Without source exclusion K=1 would already score the first
    // query through g0 (cos = 1).
    CHECK(retrieval_recall(queries, gallery, 1, 4) == 0.5);
    CHECK(retrieval_recall(queries, gallery, 2, 4) == 1.0);
    CHECK(retrieval_recall(queries, gallery, 4, 4) == 1.0);
}

TEST_CASE("retrieval is invariant to gallery row order") {
    MatF g(4, 4);
    g << 1, 0, 0, 0, 0.9f, 0.1f, 0, 0, 1, 1, 0, 0, 0, 0, 1, 0;
    EmbeddingSet gallery = rows_set(g, {0, 1, 0, 1}, {"A", "B", "C", "B"});
    MatF q(2, 4);
    q << 1, 0, 0, 0, 0, 0, 1, 0;
    EmbeddingSet queries = rows_set(q, {0, 1}, {"A", "Z"});

    MatF rg = g.colwise().reverse().eval();  // rows in reverse order
    EmbeddingSet rgallery = rows_set(rg, {1, 0, 1, 0}, {"B", "C", "B", "A"});
    for (int K : {1, 2, 3, 4})
        CHECK(retrieval_recall(queries, gallery, K, 4) == retrieval_recall(queries, rgallery, K, 4));
}

TEST_CASE("retrieval boundary ties order by source id then label") {
    // Two gallery rows identical to the query; the tie at the K=1 boundary is
    // broken by source id, so which one is "first" decides hit or miss.
    MatF q(1, 4);
    q << 1, 0, 0, 0;
    EmbeddingSet query = rows_set(q, {0}, {"Q"});
    MatF g(2, 4);
    g << 1, 0, 0, 0, 1, 0, 0, 0;
    EmbeddingSet wrong_first = rows_set(g, {1, 0}, {"A", "B"});
    CHECK(retrieval_recall(query, wrong_first, 1, 4) == 0.0);
    EmbeddingSet right_first = rows_set(g, {0, 1}, {"A", "B"});
    CHECK(retrieval_recall(query, right_first, 1, 4) == 1.0);
}

TEST_CASE("retrieval guards its arguments") {
    EmbeddingSet a = make_gaussian_embeddings(10, 4, 2, 61);
    EmbeddingSet b = make_gaussian_embeddings(10, 4, 2, 62);
    CHECK(code_of([&] { retrieval_recall(a, b, 0, 4); }) == Errc::InvalidK);
    CHECK(code_of([&] { retrieval_recall(a, b, 11, 4); }) == Errc::InvalidK);
    CHECK(code_of([&] { retrieval_recall(a, b, 1, 5); }) == Errc::InvalidDim);
}

namespace {

// Two constant clusters: rows 0..7 carry a fixed direction, rows 8..15 are
// zero. Rank-1 covariance, and the direction's largest coefficient is unique
// so the component's sign canonicalization cannot waver.
MatF two_cluster_tokens() {
    MatF tokens = MatF::Zero(16, 6);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 6; ++j) tokens(i, j) = float(j + 1) + (j == 5 ? 3.0f : 0.0f);
    return tokens;
}

}  // namespace

TEST_CASE("pca map separates two clusters on the first channel only") {
    // Channels 2 and 3 are degenerate for rank-1 tokens and stay at 128
    // while channel 1 saturates.
    MatF tokens = two_cluster_tokens();
    Image img = pca_rgb_map(tokens, 6);
    CHECK(img.width == 4);
    CHECK(img.height == 4);
    const int r0 = img.data[0], r8 = img.data[8 * 3];
    CHECK(std::abs(r0 - r8) == 255);
    for (int i = 0; i < 16; ++i) {
        CHECK(img.data[std::size_t(i) * 3 + 0] == (i < 8 ? r0 : r8));
        CHECK(img.data[std::size_t(i) * 3 + 1] == 128);
        CHECK(img.data[std::size_t(i) * 3 + 2] == 128);
    }
}

TEST_CASE("pca map renders constant tokens as mid gray") {
    MatF tokens = MatF::Constant(9, 5, 2.5f);
    Image img = pca_rgb_map(tokens, 5);
    for (std::uint8_t v : img.data) CHECK(v == 128);
}

TEST_CASE("pca map follows a token permutation") {
    MatF tokens = two_cluster_tokens();
    Image base = pca_rgb_map(tokens, 6);

    MatF rolled(16, 6);
    for (int i = 0; i < 16; ++i) rolled.row(i) = tokens.row((i + 5) % 16);
    Image moved = pca_rgb_map(rolled, 6);
    for (int i = 0; i < 16; ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(moved.data[std::size_t(i) * 3 + std::size_t(c)] ==
                  base.data[std::size_t((i + 5) % 16) * 3 + std::size_t(c)]);
}

TEST_CASE("pca map ignores coordinates past the prefix") {
    MatF tokens = two_cluster_tokens();
    MatF noisy = tokens;
    Rng rng(3);
    for (int i = 0; i < 16; ++i)
        for (int j = 3; j < 6; ++j) noisy(i, j) = float(100.0 * rng.normal());
    Image a = pca_rgb_map(tokens, 3);
    Image b = pca_rgb_map(noisy, 3);
    CHECK(a.data == b.data);
}

TEST_CASE("pca map rejects bad shapes") {
    MatF two = MatF::Random(2, 4);
    CHECK(code_of([&] { pca_rgb_map(two, 4); }) == Errc::ShapeError);
    MatF twelve = MatF::Random(12, 4);  // not a square grid
    CHECK(code_of([&] { pca_rgb_map(twelve, 4); }) == Errc::ShapeError);
    MatF ok = MatF::Random(9, 4);
    CHECK(code_of([&] { pca_rgb_map(ok, 5); }) == Errc::InvalidDim);
}

TEST_CASE("runtime profile reports one timing row per dim") {
    EmbeddingSet train = make_gaussian_embeddings(60, 16, 3, 71);
    EmbeddingSet test = make_gaussian_embeddings(30, 16, 3, 72);
    RuntimeProfile p = knn_runtime_profile(train, test, {16, 8, 2}, 5, 2);
    CHECK(p.dims == std::vector<int>{16, 8, 2});
    CHECK(p.k == 5);
    CHECK(p.repeats == 2);
    REQUIRE(p.mean_seconds.size() == 3);
    REQUIRE(p.run_seconds.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p.mean_seconds[i] > 0.0);
        CHECK(p.run_seconds[i].size() == 2);
    }
    CHECK(code_of([&] { knn_runtime_profile(train, test, {}, 5, 2); }) == Errc::ConfigError);
    CHECK(code_of([&] { knn_runtime_profile(train, test, {17}, 5, 2); }) == Errc::InvalidDim);
}

TEST_CASE("embed_dataset lays out cls and patch rows as documented") {
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.patch_size = 56;
    cfg.registers = 1;
    VitParams model = build_vit<float>(cfg, 9);
    DatasetManifest data = synthetic_tile_dataset(5, 2, 3, 256);

    EmbeddingSet cls = embed_dataset(model, data, EmbedMode::cls);
    CHECK(cls.size() == 6);
    CHECK(cls.dim() == 16);
    CHECK(cls.labels.size() == 6);
    CHECK(cls.source_ids.size() == 6);
    CHECK(cls.model_id == "vit-d16");
    std::set<std::string> ids(cls.source_ids.begin(), cls.source_ids.end());
    CHECK(ids.size() == 6);

    const int gsq = cfg.grid_sq();
    EmbeddingSet patch = embed_dataset(model, data, EmbedMode::patch, 4);
    CHECK(patch.size() == 6 * gsq);
    CHECK(patch.labels.size() == std::size_t(6 * gsq));
    for (int i = 0; i < 6; ++i)
        for (int p = 0; p < gsq; ++p) {
            CHECK(patch.source_ids[std::size_t(i * gsq + p)] == cls.source_ids[std::size_t(i)]);
            CHECK(patch.labels[std::size_t(i * gsq + p)] == cls.labels[std::size_t(i)]);
        }

    // Batch size must not change the result.
    EmbeddingSet cls1 = embed_dataset(model, data, EmbedMode::cls, 1);
    CHECK(cls.vectors == cls1.vectors);

    DatasetManifest empty;
    CHECK(code_of([&] { embed_dataset(model, empty, EmbedMode::cls); }) == Errc::EmptyDataset);
}

TEST_CASE("alignment probe emits one row per teacher and level") {
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.patch_size = 56;
    cfg.registers = 1;
    VitParams model = build_vit<float>(cfg, 9);
    std::vector<Teacher> teachers = {load_teacher(make_synthetic_teacher(7, 8, 4))};
    HeadBank heads = build_head_bank<float>(16, {teachers[0].spec().name}, {8}, nesting_levels(16, 2), 3);
    DatasetManifest data = synthetic_tile_dataset(6, 2, 2, 256);

    auto rows = projected_cls_alignment(model, heads, teachers, data);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].teacher == teachers[0].spec().name);
    CHECK(rows[0].level == 16);
    CHECK(rows[1].level == 8);
    for (const auto& r : rows) {
        CHECK(r.mean_cos >= -1.0);
        CHECK(r.mean_cos <= 1.0);
    }

    HeadBank none;
    CHECK(code_of([&] { projected_cls_alignment(model, none, teachers, data); }) == Errc::MissingHeads);
}

TEST_CASE("teacher impact summarizes per-image cosines") {
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.patch_size = 56;
    cfg.registers = 1;
    VitParams model = build_vit<float>(cfg, 9);
    std::vector<Teacher> teachers = {load_teacher(make_synthetic_teacher(7, 8, 4))};
    HeadBank heads = build_head_bank<float>(16, {teachers[0].spec().name}, {8}, nesting_levels(16, 2), 3);
    DatasetManifest data = synthetic_tile_dataset(6, 2, 2, 256);

    auto impact = teacher_impact(model, heads, teachers, data);
    REQUIRE(impact.size() == 1);
    CHECK(impact[0].teacher == teachers[0].spec().name);
    CHECK(impact[0].summary.runs.size() == data.size());
    CHECK(impact[0].features.runs.size() == data.size());
    for (double v : impact[0].summary.runs) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    for (double v : impact[0].features.runs) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    HeadBank none;
    CHECK(code_of([&] { teacher_impact(model, none, teachers, data); }) == Errc::MissingHeads);
}

TEST_CASE("throughput benchmark runs half as float32 and says so") {
    BackboneConfig cfg;
    cfg.depth = 1;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.patch_size = 56;
    cfg.registers = 1;
    VitParams model = build_vit<float>(cfg, 9);
    ThroughputResult r = throughput_benchmark(model, 2, 3, "half", 1, 0);
    CHECK(r.precision == "half");
    CHECK(r.precision_effective == "float32");
    CHECK(r.mean_ips > 0.0);
    CHECK(r.batch == 2);
    CHECK(r.batches == 3);

    ThroughputResult f = throughput_benchmark(model, 2, 2, "float32", 0, 0);
    CHECK(f.precision == "float32");
    CHECK(f.precision_effective == "float32");
    CHECK_THROWS_AS(throughput_benchmark(model, 2, 2, "int8", 0, 0), Error);
}
