#pragma once

#include <string>
#include <vector>

#include "pathryoshka/common.hpp"
#include "pathryoshka/image.hpp"

namespace pathryoshka {

inline constexpr int kViewSize = 224;

struct CropSpec {
    int x0 = 0, y0 = 0;
    int w = 0, h = 0;
    bool hflip = false, vflip = false;
};

struct VisualAugConfig {
    // Per-stain-channel perturbation in HED space: multiplicative scale drawn
    // from [1-hed_scale, 1+hed_scale], additive shift from [-hed_shift, +hed_shift]
    // relative to the channel's mean absolute concentration (keeps pure white fixed).
    double hed_scale = 0.05;
    double hed_shift = 0.02;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double blur_prob = 0.5;

    bool identity() const { return hed_scale == 0.0 && hed_shift == 0.0 && blur_prob == 0.0; }
    void validate() const;

    static VisualAugConfig disabled() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
};

struct ViewSet {
    std::vector<Image> aligned;     // one per model, same CropSpec
    std::vector<Image> nonaligned;  // one per model, independent CropSpecs
    std::vector<std::string> model_ids;  // "student", "t0", "t1", ...
    CropSpec aligned_crop;
};

// Area fraction uniform in [0.25, 1], aspect ratio uniform in [0.9, 1.1]
// relative to the source aspect, position uniform, flips at p=0.5.
// Rejection-resamples up to 10 times, then falls back to the full crop.
CropSpec sample_crop(int W, int H, Rng& rng);

// Crop, flip, bilinear resize to 224x224.
Image apply_spatial(const Image& tile, const CropSpec& crop);

// HED stain perturbation followed by optional Gaussian blur.
Image apply_visual(const Image& img, const VisualAugConfig& config, Rng& rng);

// One shared aligned crop for all models plus one independent non-aligned
// crop per model; every view gets its own visual-augmentation substream.
ViewSet make_training_views(const Image& tile, int n_teachers, const VisualAugConfig& config, Rng rng);

// Exposed for oracle tests: gaussian blur with replicate borders.
Image gaussian_blur(const Image& img, double sigma);

}  // namespace pathryoshka
