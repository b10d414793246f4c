#include "pathryoshka/teacher_hub.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>

#include "pathryoshka/checkpoint.hpp"

namespace pathryoshka {

Teacher::Teacher(TeacherSpec spec, VitParams params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    check(params_.cfg.width == spec_.dim, Errc::ConfigError, "teacher params width != spec dim");
    check(params_.cfg.grid() == spec_.grid, Errc::ConfigError, "teacher params grid != spec grid");
}

BatchTokens Teacher::forward(const std::vector<const Image*>& images) const {
    return vit_forward_images(params_, images);
}

TokenBundle Teacher::forward_one(const Image& image) const {
    return split_bundles(forward({&image})).front();
}

namespace {

int pick_heads(int dim) {
    for (int h : {8, 6, 4, 3, 2}) {
        if (dim % h == 0 && dim / h >= 8) return h;
    }
    return 1;
}

VitParams build_synthetic(const TeacherSpec& spec) {
    check(224 % spec.grid == 0, Errc::ConfigError, "synthetic teacher grid must divide 224");
    check(spec.depth >= 2 && spec.depth <= 4, Errc::ConfigError, "synthetic teacher depth must be in [2,4]");
    BackboneConfig cfg;
    cfg.depth = spec.depth;
    cfg.width = spec.dim;
    cfg.heads = pick_heads(spec.dim);
    cfg.patch_size = 224 / spec.grid;
    cfg.registers = 0;
    cfg.image_size = 224;
    cfg.preset = "";
    return build_vit<float>(cfg, hash_combine(spec.seed, fnv1a("synthetic-teacher")), spec.preprocessing);
}

VitParams build_from_checkpoint(const TeacherSpec& spec) {
    std::string path = spec.checkpoint;
    if (path.empty()) {
        std::string var = "PATHRYOSHKA_TEACHER_";
        for (char c : spec.name) var += std::isalnum(static_cast<unsigned char>(c)) ? char(std::toupper(c)) : '_';
        if (const char* v = std::getenv(var.c_str())) path = v;
    }
    check(!path.empty(), Errc::TeacherUnavailable,
          "teacher '" + spec.name + "' has no checkpoint path (config key or env var)");
    Archive ar;
    try {
        ar = Archive::load(path);
    } catch (const Error& e) {
        fail(Errc::TeacherUnavailable, "teacher '" + spec.name + "': " + e.what());
    }
    check(ar.meta.contains("model"), Errc::TeacherUnavailable, "archive has no model config: " + path);
    BackboneConfig cfg = ar.meta["model"].get<BackboneConfig>();
    Preprocess prep = spec.preprocessing;
    if (ar.meta.contains("preprocess")) prep = ar.meta["preprocess"].get<Preprocess>();
    return read_vit(ar, "backbone/", cfg, prep);
}

using LoaderMap = std::map<std::string, std::function<VitParams(const TeacherSpec&)>>;

LoaderMap& loaders() {
    static LoaderMap m{{"synthetic", build_synthetic}, {"vit-checkpoint", build_from_checkpoint}};
    return m;
}

std::mutex& loaders_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

TeacherSpec make_synthetic_teacher(std::uint64_t seed, int dim, int grid) {
    TeacherSpec spec;
    spec.name = "syn" + std::to_string(seed);
    spec.dim = dim;
    spec.grid = grid;
    spec.loader = "synthetic";
    spec.seed = seed;
    spec.validate();
    return spec;
}

Teacher load_teacher(const TeacherSpec& spec) {
    spec.validate();
    std::function<VitParams(const TeacherSpec&)> fn;
    {
        std::lock_guard<std::mutex> lock(loaders_mutex());
        auto it = loaders().find(spec.loader);
        check(it != loaders().end(), Errc::TeacherUnavailable, "no teacher loader named '" + spec.loader + "'");
        fn = it->second;
    }
    VitParams params = fn(spec);
    check(params.cfg.width == spec.dim, Errc::TeacherUnavailable,
          "loader produced width " + std::to_string(params.cfg.width) + ", spec wants " + std::to_string(spec.dim));
    check(params.cfg.grid() == spec.grid, Errc::TeacherUnavailable,
          "loader produced grid " + std::to_string(params.cfg.grid()) + ", spec wants " + std::to_string(spec.grid));
    return Teacher(spec, std::move(params));
}

void register_teacher_loader(const std::string& loader, std::function<VitParams(const TeacherSpec&)> fn) {
    std::lock_guard<std::mutex> lock(loaders_mutex());
    loaders()[loader] = std::move(fn);
}

MatF resample_patch_grid(const MatF& patches, int source_grid, int target_grid) {
    check(source_grid >= 1 && target_grid >= 1, Errc::ShapeError, "grids must be >= 1");
    check(patches.rows() == std::int64_t(source_grid) * source_grid, Errc::ShapeError,
          "patch count != source_grid^2");
    if (source_grid == target_grid) return patches;

    const int gs = source_grid, gt = target_grid;
    MatF out(std::int64_t(gt) * gt, patches.cols());
    auto src_coord = [&](int i) {
        return gt == 1 ? 0.5 * (gs - 1) : double(i) * double(gs - 1) / double(gt - 1);
    };
    for (int oy = 0; oy < gt; ++oy) {
        double sy = src_coord(oy);
        int y0 = std::min(int(sy), gs - 1);
        int y1 = std::min(y0 + 1, gs - 1);
        float wy = float(sy - y0);
        for (int ox = 0; ox < gt; ++ox) {
            double sx = src_coord(ox);
            int x0 = std::min(int(sx), gs - 1);
            int x1 = std::min(x0 + 1, gs - 1);
            float wx = float(sx - x0);
            auto row = [&](int y, int x) { return patches.row(std::int64_t(y) * gs + x); };
            out.row(std::int64_t(oy) * gt + ox) = (1 - wy) * ((1 - wx) * row(y0, x0) + wx * row(y0, x1)) +
                                                  wy * ((1 - wx) * row(y1, x0) + wx * row(y1, x1));
        }
    }
    return out;
}

StandardizationStats compute_batch_stats(const MatF& patch_rows, double epsilon) {
    check(patch_rows.rows() > 0, Errc::ShapeError, "stats on empty batch");
    check(epsilon > 0.0, Errc::ConfigError, "epsilon must be positive");
    const auto n = patch_rows.rows();
    Eigen::VectorXd mean = patch_rows.cast<double>().colwise().mean().transpose();
    Eigen::VectorXd var = ((patch_rows.cast<double>().rowwise() - mean.transpose()).array().square().colwise().sum() /
                           double(n))
                              .matrix()
                              .transpose();
    StandardizationStats s;
    s.mean = mean.cast<float>();
    s.stdev = var.array().sqrt().cast<float>();
    s.epsilon = epsilon;
    return s;
}

void standardize_patch_tokens(MatF& patch_rows, const StandardizationStats& stats) {
    check(patch_rows.cols() == stats.mean.size() && patch_rows.cols() == stats.stdev.size(), Errc::ShapeError,
          "stats dim mismatch");
    Eigen::ArrayXf denom = stats.stdev.array() + float(stats.epsilon);
    check((denom > 0.0f).all(), Errc::ConfigError, "std + epsilon must be positive");
    patch_rows = ((patch_rows.rowwise() - stats.mean.transpose()).array().rowwise() / denom.transpose()).matrix();
}

}  // namespace pathryoshka
