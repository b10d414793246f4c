#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathryoshka/common.hpp"

namespace pathryoshka {

// 8-bit RGB, interleaved, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(int w, int h) : width(w), height(h) {
        check(w > 0 && h > 0, Errc::InvalidSize, "image dimensions must be positive");
        data.assign(std::size_t(w) * h * 3, 0);
    }

    std::uint8_t* px(int x, int y) { return data.data() + (std::size_t(y) * width + x) * 3; }
    const std::uint8_t* px(int x, int y) const { return data.data() + (std::size_t(y) * width + x) * 3; }

    std::uint64_t checksum() const {
        std::uint64_t h = fnv1a(&width, sizeof width);
        h = fnv1a(&height, sizeof height, h);
        return fnv1a(data.data(), data.size(), h);
    }
};

// Returns empty optional-like (width==0) on decode failure instead of throwing,
// so directory scans can count and skip corrupt files.
bool read_image(const std::string& path, Image& out);
Image read_image_or_fail(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Bilinear resize with half-pixel centers: identity at equal size, exact 2x2
// box average at integer 2:1 downscale.
Image resize_bilinear(const Image& src, int out_w, int out_h);

// Shorter side to `target`, then centered `target` x `target` crop.
Image resize_shorter_center_crop(const Image& src, int target);

}  // namespace pathryoshka
