#include "pathryoshka/eval.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace pathryoshka {

namespace {

using MatXd = Eigen::MatrixXd;  // column-major scratch for decompositions

double cos_d(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = std::max(a.norm(), 1e-12);
    const double nb = std::max(b.norm(), 1e-12);
    return a.dot(b) / (na * nb);
}

// Rows of `v`, restricted to a coordinate subset (or the first m when
// `coords` is null), L2-normalized in double. Zero rows stay zero.
MatD subset_normalized(const MatF& v, const std::vector<int>* coords, int m) {
    MatD out(v.rows(), m);
    if (coords) {
        for (int j = 0; j < m; ++j) out.col(j) = v.col((*coords)[std::size_t(j)]).cast<double>();
    } else {
        out = v.leftCols(m).cast<double>();
    }
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n > 0.0) out.row(i) /= n;
    }
    return out;
}

// Top-k train indices per test row, ordered by similarity desc then index
// asc, then a majority vote with the documented tie-breaks.
std::vector<int> knn_predict(const MatD& train_n, const std::vector<int>& train_labels,
                             const MatD& test_n, int k) {
    const int ntr = int(train_n.rows());
    const int nte = int(test_n.rows());
    auto pred = std::vector<int>(std::size_t(nte));
    auto best_sim = std::vector<double>(std::size_t(k));
    auto best_idx = std::vector<int>(std::size_t(k));

    const int block = 256;
    MatD sims;
    for (int b0 = 0; b0 < nte; b0 += block) {
        const int bn = std::min(block, nte - b0);
        sims.noalias() = test_n.middleRows(b0, bn) * train_n.transpose();
        for (int r = 0; r < bn; ++r) {
            const double* row = sims.row(r).data();
            int filled = 0;
            for (int j = 0; j < ntr; ++j) {
                const double s = row[j];
                if (filled == k && (s < best_sim[std::size_t(k - 1)] ||
                                    (s == best_sim[std::size_t(k - 1)] && j > best_idx[std::size_t(k - 1)])))
                    continue;
                int pos = filled < k ? filled : k - 1;
                while (pos > 0 && (s > best_sim[std::size_t(pos - 1)] ||
                                   (s == best_sim[std::size_t(pos - 1)] && j < best_idx[std::size_t(pos - 1)]))) {
                    if (pos < k) {
                        best_sim[std::size_t(pos)] = best_sim[std::size_t(pos - 1)];
                        best_idx[std::size_t(pos)] = best_idx[std::size_t(pos - 1)];
                    }
                    --pos;
                }
                if (pos < k) {
                    best_sim[std::size_t(pos)] = s;
                    best_idx[std::size_t(pos)] = j;
                }
                if (filled < k) ++filled;
            }

            struct Tally {
                int count = 0;
                double dist = 0.0;
            };
            std::map<int, Tally> votes;
            for (int j = 0; j < filled; ++j) {
                Tally& t = votes[train_labels[std::size_t(best_idx[std::size_t(j)])]];
                t.count += 1;
                t.dist += 1.0 - best_sim[std::size_t(j)];
            }
            int win_label = 0;
            Tally win{-1, 0.0};
            for (const auto& [label, t] : votes) {
                const bool better = t.count > win.count ||
                                    (t.count == win.count && t.dist < win.dist);
                // map iteration is label-ascending, so equal (count, dist)
                // keeps the earlier (lowest) label
                if (better) {
                    win = t;
                    win_label = label;
                }
            }
            pred[std::size_t(b0 + r)] = win_label;
        }
    }
    return pred;
}

double knn_accuracy(const EmbeddingSet& train, const EmbeddingSet& test, int k,
                    const std::vector<int>* coords, int m) {
    check(train.size() >= 1 && test.size() >= 1, Errc::EmptyDataset, "empty embedding set");
    check(train.has_labels() && test.has_labels(), Errc::ConfigError, "k-NN needs labeled sets");
    check(train.dim() == test.dim(), Errc::ShapeError, "train/test dims differ");
    check(k >= 1 && k <= train.size(), Errc::InvalidK, "need 1 <= k <= |train|");
    check(m >= 1 && m <= train.dim(), Errc::InvalidDim, "prefix dim out of range");
    MatD tr = subset_normalized(train.vectors, coords, m);
    MatD te = subset_normalized(test.vectors, coords, m);
    std::vector<int> pred = knn_predict(tr, train.labels, te, k);
    int correct = 0;
    for (int i = 0; i < test.size(); ++i)
        if (pred[std::size_t(i)] == test.labels[std::size_t(i)]) ++correct;
    return double(correct) / double(test.size());
}

}  // namespace

ProbeResult ProbeResult::from_runs(std::string metric, std::vector<double> values) {
    check(!values.empty(), Errc::ConfigError, "probe needs at least one run");
    ProbeResult r;
    r.metric = std::move(metric);
    r.runs = std::move(values);
    double sum = 0.0;
    for (double v : r.runs) sum += v;
    r.mean = sum / double(r.runs.size());
    double sq = 0.0;
    for (double v : r.runs) sq += (v - r.mean) * (v - r.mean);
    r.stdev = std::sqrt(sq / double(r.runs.size()));
    return r;
}

EmbeddingSet embed_dataset(const VitParams& model, const DatasetManifest& manifest, EmbedMode mode,
                           int batch) {
    check(batch >= 1, Errc::ConfigError, "batch must be >= 1");
    check(!manifest.records.empty(), Errc::EmptyDataset, "nothing to embed");
    const int n = int(manifest.records.size());
    const int gsq = model.cfg.grid_sq();
    const int rows_per = mode == EmbedMode::cls ? 1 : gsq;

    EmbeddingSet out;
    out.model_id = "vit-d" + std::to_string(model.cfg.width);
    out.vectors.resize(std::int64_t(n) * rows_per, model.cfg.width);
    out.source_ids.reserve(std::size_t(n) * std::size_t(rows_per));
    bool all_labeled = true;
    for (const auto& r : manifest.records) all_labeled = all_labeled && r.label.has_value();

    std::vector<Image> images;
    std::vector<const Image*> ptrs;
    for (int b0 = 0; b0 < n; b0 += batch) {
        const int bn = std::min(batch, n - b0);
        images.clear();
        ptrs.clear();
        for (int i = 0; i < bn; ++i)
            images.push_back(resize_shorter_center_crop(load_tile(manifest.records[std::size_t(b0 + i)]),
                                                        model.cfg.image_size));
        for (const Image& im : images) ptrs.push_back(&im);
        BatchTokens bt = vit_forward_images(model, ptrs);
        if (mode == EmbedMode::cls)
            out.vectors.middleRows(b0, bn) = bt.cls;
        else
            out.vectors.middleRows(std::int64_t(b0) * gsq, std::int64_t(bn) * gsq) = bt.patches;
    }
    for (int i = 0; i < n; ++i) {
        const TileRecord& r = manifest.records[std::size_t(i)];
        for (int p = 0; p < rows_per; ++p) {
            out.source_ids.push_back(r.source_id);
            if (all_labeled) out.labels.push_back(*r.label);
        }
    }
    return out;
}

double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, int k, int m) {
    return knn_accuracy(train, test, k, nullptr, m);
}

ProbeResult random_subset_baseline(const EmbeddingSet& train, const EmbeddingSet& test, int k, int m,
                                   int seeds, std::uint64_t seed) {
    check(m >= 1 && m <= train.dim(), Errc::InvalidDim, "subset size out of range");
    check(seeds >= 1, Errc::ConfigError, "need at least one seed");
    const int d = train.dim();
    std::vector<double> runs;
    for (int run = 0; run < seeds; ++run) {
        Rng rng = rng_at(seed, "random_subset", std::uint64_t(run));
        auto pool = std::vector<int>(std::size_t(d));
        std::iota(pool.begin(), pool.end(), 0);
        for (int i = 0; i < m; ++i)
            std::swap(pool[std::size_t(i)], pool[std::size_t(i) + std::size_t(rng.uniform_u64(std::uint64_t(d - i)))]);
        pool.resize(std::size_t(m));
        runs.push_back(knn_accuracy(train, test, k, &pool, m));
    }
    return ProbeResult::from_runs("knn_random_subset_m" + std::to_string(m), std::move(runs));
}

ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, int epochs, int seeds,
                         std::uint64_t seed, double lr) {
    check(train.has_labels() && test.has_labels(), Errc::ConfigError, "probe needs labeled sets");
    check(train.dim() == test.dim(), Errc::ShapeError, "train/test dims differ");
    check(epochs >= 1 && seeds >= 1, Errc::ConfigError, "epochs and seeds must be >= 1");

    std::vector<int> classes(train.labels);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    const int C = int(classes.size());
    check(C >= 2, Errc::DegenerateLabels, "train set has a single class");
    std::map<int, int> to_class;
    for (int c = 0; c < C; ++c) to_class[classes[std::size_t(c)]] = c;

    const int n = train.size(), d = train.dim();
    MatD X = train.vectors.cast<double>();
    Eigen::RowVectorXd mu = X.colwise().mean();
    Eigen::RowVectorXd sd = ((X.rowwise() - mu).array().square().colwise().mean()).sqrt().matrix();
    auto standardize = [&](MatD& M) {
        M.rowwise() -= mu;
        for (int j = 0; j < d; ++j) M.col(j) /= (sd[j] + 1e-8);
    };
    standardize(X);
    MatD Xte = test.vectors.cast<double>();
    standardize(Xte);

    MatD Y = MatD::Zero(n, C);
    for (int i = 0; i < n; ++i) Y(i, to_class.at(train.labels[std::size_t(i)])) = 1.0;

    auto softmax_rows = [](MatD& L) {
        for (Eigen::Index i = 0; i < L.rows(); ++i) {
            Eigen::RowVectorXd row = L.row(i);
            row.array() -= row.maxCoeff();
            Eigen::RowVectorXd e = row.array().exp().matrix();
            L.row(i) = e / e.sum();
        }
    };

    std::vector<double> runs;
    for (int run = 0; run < seeds; ++run) {
        Rng rng = rng_at(seed, "linear_probe", std::uint64_t(run));
        MatD W(d, C);
        for (int i = 0; i < d; ++i)
            for (int c = 0; c < C; ++c) W(i, c) = 0.01 * rng.normal();
        Eigen::RowVectorXd bias = Eigen::RowVectorXd::Zero(C);

        for (int e = 0; e < epochs; ++e) {
            MatD P = X * W;
            P.rowwise() += bias;
            softmax_rows(P);
            P -= Y;
            MatD gW = X.transpose() * P / double(n) + 1e-4 * W;
            bias -= lr * (P.colwise().sum() / double(n));
            W -= lr * gW;
        }

        MatD L = Xte * W;
        L.rowwise() += bias;
        std::vector<int> hits(std::size_t(C), 0), totals(std::size_t(C), 0);
        int correct = 0;
        for (int i = 0; i < test.size(); ++i) {
            int arg = 0;
            L.row(i).maxCoeff(&arg);
            const int truth = test.labels[std::size_t(i)];
            auto it = to_class.find(truth);
            if (it != to_class.end()) {
                totals[std::size_t(it->second)] += 1;
                if (classes[std::size_t(arg)] == truth) {
                    hits[std::size_t(it->second)] += 1;
                    ++correct;
                }
            }
        }
        if (C == 2) {
            double bal = 0.0;
            int present = 0;
            for (int c = 0; c < C; ++c)
                if (totals[std::size_t(c)] > 0) {
                    bal += double(hits[std::size_t(c)]) / double(totals[std::size_t(c)]);
                    ++present;
                }
            runs.push_back(present > 0 ? bal / double(present) : 0.0);
        } else {
            runs.push_back(double(correct) / double(test.size()));
        }
    }
    return ProbeResult::from_runs(C == 2 ? "linear_probe_balanced_acc" : "linear_probe_acc",
                                  std::move(runs));
}

double retrieval_recall(const EmbeddingSet& queries, const EmbeddingSet& gallery, int K, int m) {
    check(queries.size() >= 1 && gallery.size() >= 1, Errc::EmptyDataset, "empty embedding set");
    check(queries.has_labels() && gallery.has_labels(), Errc::ConfigError, "retrieval needs labels");
    check(queries.dim() == gallery.dim(), Errc::ShapeError, "query/gallery dims differ");
    check(K >= 1 && K <= gallery.size(), Errc::InvalidK, "need 1 <= K <= |gallery|");
    check(m >= 1 && m <= queries.dim(), Errc::InvalidDim, "prefix dim out of range");

    MatD q = subset_normalized(queries.vectors, nullptr, m);
    MatD g = subset_normalized(gallery.vectors, nullptr, m);
    const int nq = queries.size(), ng = gallery.size();

    // Global candidate order: similarity desc, source id asc, label asc. A
    // query is a hit when its best same-label candidate ranks inside the top
    // K after rows sharing the query's source id are removed.
    auto tie_before = [&](int a, int b) {
        const std::string& sa = gallery.source_ids[std::size_t(a)];
        const std::string& sb = gallery.source_ids[std::size_t(b)];
        if (sa != sb) return sa < sb;
        return gallery.labels[std::size_t(a)] < gallery.labels[std::size_t(b)];
    };

    int hits = 0;
    const int block = 256;
    MatD sims;
    for (int b0 = 0; b0 < nq; b0 += block) {
        const int bn = std::min(block, nq - b0);
        sims.noalias() = q.middleRows(b0, bn) * g.transpose();
        for (int r = 0; r < bn; ++r) {
            const int qi = b0 + r;
            const int q_label = queries.labels[std::size_t(qi)];
            const std::string& q_src = queries.source_ids[std::size_t(qi)];

            int best = -1;
            for (int j = 0; j < ng; ++j) {
                if (gallery.source_ids[std::size_t(j)] == q_src) continue;
                if (gallery.labels[std::size_t(j)] != q_label) continue;
                if (best < 0 || sims(r, j) > sims(r, best) ||
                    (sims(r, j) == sims(r, best) && tie_before(j, best)))
                    best = j;
            }
            if (best < 0) continue;

            int rank = 0;
            for (int j = 0; j < ng; ++j) {
                if (j == best || gallery.source_ids[std::size_t(j)] == q_src) continue;
                if (sims(r, j) > sims(r, best) ||
                    (sims(r, j) == sims(r, best) && tie_before(j, best)))
                    ++rank;
            }
            if (rank < K) ++hits;
        }
    }
    return double(hits) / double(nq);
}

Image pca_rgb_map(const MatF& tokens, int m) {
    check(tokens.rows() >= 3, Errc::ShapeError, "need at least 3 tokens for a 3-component PCA");
    check(m >= 1 && m <= tokens.cols(), Errc::InvalidDim, "prefix dim out of range");
    const int g = int(std::lround(std::sqrt(double(tokens.rows()))));
    check(std::int64_t(g) * g == tokens.rows(), Errc::ShapeError, "token count is not a square grid");

    MatXd X = tokens.leftCols(m).cast<double>();
    Eigen::RowVectorXd mu = X.colwise().mean();
    X.rowwise() -= mu;

    Eigen::BDCSVD<MatXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double tol = 1e-9 * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);

    Image out(g, g);
    std::fill(out.data.begin(), out.data.end(), std::uint8_t(128));
    for (int c = 0; c < 3; ++c) {
        if (c >= sv.size() || sv(c) <= tol) continue;  // degenerate channel stays 128
        Eigen::VectorXd comp = svd.matrixV().col(c);
        int peak = 0;
        comp.cwiseAbs().maxCoeff(&peak);
        if (comp(peak) < 0.0) comp = -comp;  // sign canonicalization
        Eigen::VectorXd proj = X * comp;
        const double lo = proj.minCoeff(), hi = proj.maxCoeff();
        if (hi - lo < 1e-12) continue;
        for (int i = 0; i < g * g; ++i) {
            const double v = (proj(i) - lo) / (hi - lo) * 255.0;
            out.data[std::size_t(i) * 3 + std::size_t(c)] =
                std::uint8_t(std::clamp(std::lround(v), 0l, 255l));
        }
    }
    return out;
}

RuntimeProfile knn_runtime_profile(const EmbeddingSet& train, const EmbeddingSet& test,
                                   const std::vector<int>& dims, int k, int repeats) {
    check(!dims.empty(), Errc::ConfigError, "no dims to profile");
    check(repeats >= 1, Errc::ConfigError, "repeats must be >= 1");
    check(train.size() >= 1 && test.size() >= 1, Errc::EmptyDataset, "empty embedding set");
    check(train.has_labels(), Errc::ConfigError, "profile needs labeled train set");
    for (int m : dims)
        check(m >= 1 && m <= train.dim(), Errc::InvalidDim, "profiled dim out of range");
    check(k >= 1 && k <= train.size(), Errc::InvalidK, "need 1 <= k <= |train|");

    RuntimeProfile prof;
    prof.dims = dims;
    prof.k = k;
    prof.repeats = repeats;
    for (int m : dims) {
        std::vector<double> secs;
        for (int rep = 0; rep < repeats; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            MatD tr = subset_normalized(train.vectors, nullptr, m);
            MatD te = subset_normalized(test.vectors, nullptr, m);
            volatile int sink = knn_predict(tr, train.labels, te, k).back();
            (void)sink;
            const auto t1 = std::chrono::steady_clock::now();
            secs.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        double sum = 0.0;
        for (double s : secs) sum += s;
        prof.mean_seconds.push_back(sum / double(secs.size()));
        prof.run_seconds.push_back(std::move(secs));
    }
    return prof;
}

EmbeddingSet make_gaussian_embeddings(int n, int d, int classes, std::uint64_t seed,
                                      double separation) {
    check(n >= 1 && d >= 1 && classes >= 1, Errc::ConfigError, "bad gaussian fixture shape");
    EmbeddingSet out;
    out.model_id = "gaussian";
    out.vectors.resize(n, d);
    Rng root(seed);
    MatF means(classes, d);
    for (int c = 0; c < classes; ++c) {
        Rng r = root.fork("mean" + std::to_string(c));
        for (int j = 0; j < d; ++j) means(c, j) = float(r.normal());
        const float nn = means.row(c).norm();
        if (nn > 0) means.row(c) *= float(separation) / nn;
    }
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        Rng r = root.fork("point" + std::to_string(i));
        for (int j = 0; j < d; ++j) out.vectors(i, j) = means(c, j) + float(r.normal());
        out.labels.push_back(c);
        char buf[32];
        std::snprintf(buf, sizeof buf, "g%06d", i);
        out.source_ids.push_back(buf);
    }
    return out;
}

std::vector<TeacherImpact> teacher_impact(const VitParams& backbone, const HeadBank& heads,
                                          const std::vector<Teacher>& teachers,
                                          const DatasetManifest& manifest) {
    check(!heads.teacher_names.empty(), Errc::MissingHeads, "checkpoint carries no head bank");
    check(teachers.size() == heads.teacher_names.size(), Errc::ConfigError,
          "teacher list does not match head bank");
    check(!manifest.records.empty(), Errc::EmptyDataset, "nothing to evaluate");
    const int n = int(manifest.records.size());
    const int full = heads.levels.levels.front();
    const int gsq = backbone.cfg.grid_sq();

    auto student_cls = std::vector<Eigen::VectorXf>(std::size_t(n));
    auto student_patches = std::vector<MatF>(std::size_t(n));
    std::vector<std::vector<Eigen::VectorXf>> teacher_cls(teachers.size());
    std::vector<MatF> teacher_patches(teachers.size());
    for (std::size_t t = 0; t < teachers.size(); ++t) {
        teacher_cls[t].resize(std::size_t(n));
        teacher_patches[t].resize(std::int64_t(n) * gsq, teachers[t].spec().dim);
    }

    for (int i = 0; i < n; ++i) {
        Image img = resize_shorter_center_crop(load_tile(manifest.records[std::size_t(i)]),
                                               backbone.cfg.image_size);
        BatchTokens sb = vit_forward_images(backbone, {&img});
        student_cls[std::size_t(i)] = sb.cls.row(0).transpose();
        student_patches[std::size_t(i)] = sb.patches;
        for (std::size_t t = 0; t < teachers.size(); ++t) {
            TokenBundle tb = teachers[t].forward_one(img);
            teacher_cls[t][std::size_t(i)] = tb.cls;
            teacher_patches[t].middleRows(std::int64_t(i) * gsq, gsq) =
                resample_patch_grid(tb.patches, teachers[t].spec().grid, backbone.cfg.grid());
        }
    }

    std::vector<TeacherImpact> out;
    for (std::size_t t = 0; t < teachers.size(); ++t) {
        const std::string& name = teachers[t].spec().name;
        check(name == heads.teacher_names[t], Errc::ConfigError, "teacher order mismatch");
        standardize_patch_tokens(teacher_patches[t], compute_batch_stats(teacher_patches[t]));

        std::vector<double> summary, features;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXf proj = project_cls(heads, student_cls[std::size_t(i)], name, full);
            summary.push_back(cos_d(proj.cast<double>(), teacher_cls[t][std::size_t(i)].cast<double>()));

            MatF pp = project_patches(heads, student_patches[std::size_t(i)], name, full);
            double acc = 0.0;
            for (int p = 0; p < gsq; ++p)
                acc += cos_d(pp.row(p).transpose().cast<double>(),
                             teacher_patches[t].row(std::int64_t(i) * gsq + p).transpose().cast<double>());
            features.push_back(acc / double(gsq));
        }
        TeacherImpact ti;
        ti.teacher = name;
        ti.summary = ProbeResult::from_runs("summary_cos", std::move(summary));
        ti.features = ProbeResult::from_runs("features_cos", std::move(features));
        out.push_back(std::move(ti));
    }
    return out;
}

std::vector<AlignmentRow> projected_cls_alignment(const VitParams& backbone, const HeadBank& heads,
                                                  const std::vector<Teacher>& teachers,
                                                  const DatasetManifest& manifest) {
    check(!heads.teacher_names.empty(), Errc::MissingHeads, "no head bank");
    check(teachers.size() == heads.teacher_names.size(), Errc::ConfigError,
          "teacher list does not match head bank");
    check(!manifest.records.empty(), Errc::EmptyDataset, "nothing to evaluate");
    const int n = int(manifest.records.size());

    std::vector<AlignmentRow> rows;
    for (std::size_t t = 0; t < teachers.size(); ++t)
        for (int m : heads.levels.levels)
            rows.push_back({teachers[t].spec().name, m, 0.0});

    for (int i = 0; i < n; ++i) {
        Image img = resize_shorter_center_crop(load_tile(manifest.records[std::size_t(i)]),
                                               backbone.cfg.image_size);
        BatchTokens sb = vit_forward_images(backbone, {&img});
        Eigen::VectorXf cls = sb.cls.row(0).transpose();
        std::size_t row = 0;
        for (std::size_t t = 0; t < teachers.size(); ++t) {
            Eigen::VectorXd tcls = teachers[t].forward_one(img).cls.cast<double>();
            for (int m : heads.levels.levels) {
                Eigen::VectorXf proj = project_cls(heads, cls, teachers[t].spec().name, m);
                rows[row].mean_cos += cos_d(proj.cast<double>(), tcls);
                ++row;
            }
        }
    }
    for (auto& r : rows) r.mean_cos /= double(n);
    return rows;
}

ThroughputResult throughput_benchmark(const VitParams& model, int batch, int n_batches,
                                      const std::string& precision, int warmup, std::uint64_t seed) {
    check(batch >= 1 && n_batches >= 1 && warmup >= 0, Errc::ConfigError, "bad benchmark shape");
    check(precision == "float32" || precision == "half", Errc::ConfigError,
          "precision must be float32 or half");

    Rng rng = rng_at(seed, "throughput");
    Image img(model.cfg.image_size, model.cfg.image_size);
    for (auto& p : img.data) p = std::uint8_t(rng.uniform_u64(256));
    std::vector<const Image*> views(std::size_t(batch), &img);
    MatF rows = im2row(views, model.prep, model.cfg.patch_size);

    std::vector<double> ips;
    for (int b = 0; b < warmup + n_batches; ++b) {
        const auto t0 = std::chrono::steady_clock::now();
        BatchTokens bt = vit_forward(model, rows);
        const auto t1 = std::chrono::steady_clock::now();
        volatile float sink = bt.cls(0, 0);
        (void)sink;
        if (b >= warmup)
            ips.push_back(double(batch) / std::chrono::duration<double>(t1 - t0).count());
    }
    ProbeResult stat = ProbeResult::from_runs("throughput", std::move(ips));
    ThroughputResult out;
    out.mean_ips = stat.mean;
    out.std_ips = stat.stdev;
    out.batch = batch;
    out.batches = n_batches;
    out.precision = precision;
    out.precision_effective = "float32";  // no half-precision kernels on this build
    return out;
}

}  // namespace pathryoshka
