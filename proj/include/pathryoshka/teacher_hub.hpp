#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pathryoshka/image.hpp"
#include "pathryoshka/vit.hpp"

namespace pathryoshka {

struct TeacherSpec {
    std::string name;
    int dim = 64;       // d_t
    int grid = 16;      // G_t at 224
    Preprocess preprocessing{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
    std::string loader = "synthetic";
    std::uint64_t seed = 0;       // synthetic loader
    int depth = 2;                // synthetic loader, valid range [2, 4]
    std::string checkpoint;       // vit-checkpoint loader

    void validate() const {
        check(dim >= 8, Errc::ConfigError, "teacher dim must be >= 8");
        check(grid >= 1, Errc::ConfigError, "teacher grid must be >= 1");
        check(!name.empty(), Errc::ConfigError, "teacher needs a name");
    }
};

// Frozen encoder. All built-in loaders produce ViT-shaped teachers; a plug-in
// registers a loader that maps its spec to parameters (no network fetches).
class Teacher {
public:
    Teacher(TeacherSpec spec, VitParams params);

    const TeacherSpec& spec() const { return spec_; }
    const VitParams& params() const { return params_; }

    BatchTokens forward(const std::vector<const Image*>& images) const;
    TokenBundle forward_one(const Image& image) const;
    std::uint64_t param_checksum() const { return params_.checksum(); }

private:
    TeacherSpec spec_;
    VitParams params_;
};

inline BatchTokens teacher_forward(const Teacher& t, const std::vector<const Image*>& images) {
    return t.forward(images);
}

// Small frozen randomly-initialized ViT; deterministic per seed.
TeacherSpec make_synthetic_teacher(std::uint64_t seed, int dim, int grid);

// Resolves spec.loader through the registry. Built-ins: "synthetic",
// "vit-checkpoint" (reads a deployed archive; path from spec.checkpoint or
// env var PATHRYOSHKA_TEACHER_<NAME>). Unknown loader -> TeacherUnavailable.
Teacher load_teacher(const TeacherSpec& spec);

void register_teacher_loader(const std::string& loader,
                             std::function<VitParams(const TeacherSpec&)> fn);

// Bilinear resampling over the 2-D token grid, channelwise; align-corners
// mapping so the 4 corners are fixed points. Identity when grids match.
MatF resample_patch_grid(const MatF& patches, int source_grid, int target_grid);

struct StandardizationStats {
    Eigen::VectorXf mean;   // per channel
    Eigen::VectorXf stdev;  // per channel, population
    double epsilon = 1e-6;
};

// Moments pooled over rows (batch x tokens) per channel, accumulated in double.
StandardizationStats compute_batch_stats(const MatF& patch_rows, double epsilon = 1e-6);

// (x - mean) / (std + epsilon), in place.
void standardize_patch_tokens(MatF& patch_rows, const StandardizationStats& stats);

}  // namespace pathryoshka
