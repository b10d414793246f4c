#pragma once

#include <string>
#include <vector>

#include "pathryoshka/image.hpp"

namespace pathryoshka {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Line chart rasterized to an RGB image: axes, gridlines, numeric tick
// labels in a built-in 3x5 digit font. Full-text titles and legends live in
// the SVG twin; the PNG stays dependency-free.
Image render_line_chart(const std::vector<Series>& series, bool log_x = false, int width = 720,
                        int height = 440);

// SVG version of the same chart with title, axis labels and a legend.
std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_x = false,
                           int width = 720, int height = 440);

void save_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::string& path_base, bool log_x = false);

Image upscale_nearest(const Image& src, int factor);
Image hstack(const std::vector<Image>& images, int gap = 2, std::uint8_t background = 255);

}  // namespace pathryoshka
