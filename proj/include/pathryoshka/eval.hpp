#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathryoshka/heads.hpp"
#include "pathryoshka/image.hpp"
#include "pathryoshka/teacher_hub.hpp"
#include "pathryoshka/tile_dataset.hpp"
#include "pathryoshka/vit.hpp"

namespace pathryoshka {

// Frozen embeddings of one dataset under one model. A "prefix view" is just
// the first m columns of `vectors`; every op below takes m and slices itself.
struct EmbeddingSet {
    MatF vectors;  // N x d
    std::vector<int> labels;              // empty when unlabeled, else length N
    std::vector<std::string> source_ids;  // length N; patch rows share their tile's id
    std::string model_id;

    int size() const { return int(vectors.rows()); }
    int dim() const { return int(vectors.cols()); }
    bool has_labels() const { return !labels.empty(); }
};

struct ProbeResult {
    std::string metric;
    double mean = 0.0;
    double stdev = 0.0;  // population std over runs; 0 when runs == 1
    std::vector<double> runs;

    static ProbeResult from_runs(std::string metric, std::vector<double> values);
};

enum class EmbedMode { cls, patch };

// Evaluation preprocessing is fixed: resize shorter side to 224, center-crop.
// cls mode: one row per tile. patch mode: G^2 rows per tile, grid row-major.
EmbeddingSet embed_dataset(const VitParams& model, const DatasetManifest& manifest, EmbedMode mode,
                           int batch = 32);

// Majority vote over the k nearest train rows by cosine similarity on the
// first m dims. Order among neighbors: similarity desc, then train index asc.
// Vote ties: smaller summed distance (1 - cos), then lowest class index.
double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, int k, int m);

// Per seed, sample m coordinate indices uniformly without replacement and run
// the same k-NN on those coordinates instead of a prefix.
ProbeResult random_subset_baseline(const EmbeddingSet& train, const EmbeddingSet& test, int k, int m,
                                   int seeds = 5, std::uint64_t seed = 0);

// Single affine layer + softmax cross-entropy on frozen embeddings, full-batch
// gradient descent, one run per seed. Binary tasks report balanced accuracy,
// multiclass plain accuracy.
ProbeResult linear_probe(const EmbeddingSet& train, const EmbeddingSet& test, int epochs = 200,
                         int seeds = 5, std::uint64_t seed = 0, double lr = 0.5);

// Fraction of queries whose top-K gallery rows (cosine on first m dims,
// excluding rows that share the query's source id) contain the query's label.
// Boundary ties are ordered by (similarity desc, source id asc, label asc) so
// the result is invariant to gallery permutation.
double retrieval_recall(const EmbeddingSet& queries, const EmbeddingSet& gallery, int K, int m);

// PCA over one image's patch tokens (first m dims); components 1..3 min-max
// scaled to [0,255] per channel. Degenerate components render as 128. Output
// is G x G; callers upscale for export.
Image pca_rgb_map(const MatF& tokens, int m);

struct RuntimeProfile {
    std::vector<int> dims;
    std::vector<double> mean_seconds;            // one per dim, mean over repeats
    std::vector<std::vector<double>> run_seconds;  // [dim][repeat]
    int k = 0;
    int repeats = 0;
};

// Wall-clock of the k-NN prediction per prefix dim. Single-threaded on
// purpose: the point is the scaling curve, not peak speed.
RuntimeProfile knn_runtime_profile(const EmbeddingSet& train, const EmbeddingSet& test,
                                   const std::vector<int>& dims, int k, int repeats);

// Label-bearing Gaussian blobs, for fixtures and the runtime profile.
EmbeddingSet make_gaussian_embeddings(int n, int d, int classes, std::uint64_t seed,
                                      double separation = 2.0);

struct TeacherImpact {
    std::string teacher;
    ProbeResult summary;   // per-image cosine: projected student CLS vs teacher CLS, full dim
    ProbeResult features;  // per-image mean tokenwise cosine vs standardized teacher patches
};

// Head-bank diagnostic over a dataset. Uses the backbone the heads were fit
// to, so callers pass the live (non-EMA) student. MissingHeads when the bank
// is empty.
std::vector<TeacherImpact> teacher_impact(const VitParams& backbone, const HeadBank& heads,
                                          const std::vector<Teacher>& teachers,
                                          const DatasetManifest& manifest);

struct AlignmentRow {
    std::string teacher;
    int level = 0;
    double mean_cos = 0.0;
};

// Mean cosine between the level-m projected student CLS and the teacher CLS,
// per (teacher, level), over a manifest. The convergence probe for training.
std::vector<AlignmentRow> projected_cls_alignment(const VitParams& backbone, const HeadBank& heads,
                                                  const std::vector<Teacher>& teachers,
                                                  const DatasetManifest& manifest);

struct ThroughputResult {
    double mean_ips = 0.0;  // images/second, mean over timed batches
    double std_ips = 0.0;
    int batch = 0;
    int batches = 0;
    std::string precision;            // requested
    std::string precision_effective;  // what actually ran on this build
};

// Forward-only model throughput on a fixed random batch; `warmup` batches are
// excluded from the stats. "half" is accepted and runs as float32 here, and
// the result says so.
ThroughputResult throughput_benchmark(const VitParams& model, int batch = 32, int n_batches = 500,
                                      const std::string& precision = "half", int warmup = 10,
                                      std::uint64_t seed = 0);

}  // namespace pathryoshka
