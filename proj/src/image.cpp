#include "pathryoshka/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace pathryoshka {

bool read_image(const std::string& path, Image& out) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) return false;
    out.width = bgr.cols;
    out.height = bgr.rows;
    out.data.resize(std::size_t(bgr.cols) * bgr.rows * 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const std::uint8_t* row = bgr.ptr<std::uint8_t>(y);
        std::uint8_t* dst = out.data.data() + std::size_t(y) * bgr.cols * 3;
        for (int x = 0; x < bgr.cols; ++x) {
            dst[x * 3 + 0] = row[x * 3 + 2];
            dst[x * 3 + 1] = row[x * 3 + 1];
            dst[x * 3 + 2] = row[x * 3 + 0];
        }
    }
    return true;
}

Image read_image_or_fail(const std::string& path) {
    Image img;
    if (!read_image(path, img)) fail(Errc::IoError, "cannot decode image: " + path);
    return img;
}

void write_png(const std::string& path, const Image& img) {
    check(img.width > 0 && img.height > 0, Errc::InvalidSize, "write_png: empty image");
    cv::Mat bgr(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        std::uint8_t* row = bgr.ptr<std::uint8_t>(y);
        const std::uint8_t* src = img.data.data() + std::size_t(y) * img.width * 3;
        for (int x = 0; x < img.width; ++x) {
            row[x * 3 + 0] = src[x * 3 + 2];
            row[x * 3 + 1] = src[x * 3 + 1];
            row[x * 3 + 2] = src[x * 3 + 0];
        }
    }
    if (!cv::imwrite(path, bgr)) fail(Errc::IoError, "cannot write png: " + path);
}

namespace {

struct Tap {
    int i0, i1;
    float w1;  // weight of i1; i0 gets 1 - w1
};

void build_taps(int src_n, int dst_n, std::vector<Tap>& taps) {
    taps.resize(std::size_t(dst_n));
    const double scale = double(src_n) / double(dst_n);
    for (int d = 0; d < dst_n; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        double f = std::floor(s);
        int i0 = int(f);
        double w1 = s - f;
        int i1 = i0 + 1;
        i0 = std::clamp(i0, 0, src_n - 1);
        i1 = std::clamp(i1, 0, src_n - 1);
        taps[std::size_t(d)] = {i0, i1, float(w1)};
    }
}

}  // namespace

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    check(src.width > 0 && src.height > 0, Errc::InvalidSize, "resize: empty source");
    check(out_w > 0 && out_h > 0, Errc::InvalidSize, "resize: invalid target size");
    if (src.width == out_w && src.height == out_h) return src;

    std::vector<Tap> tx, ty;
    build_taps(src.width, out_w, tx);
    build_taps(src.height, out_h, ty);

    Image dst(out_w, out_h);
    std::vector<float> row(std::size_t(out_w) * 3);
    for (int y = 0; y < out_h; ++y) {
        const Tap& t = ty[std::size_t(y)];
        const std::uint8_t* r0 = src.data.data() + std::size_t(t.i0) * src.width * 3;
        const std::uint8_t* r1 = src.data.data() + std::size_t(t.i1) * src.width * 3;
        const float wy1 = t.w1, wy0 = 1.0f - t.w1;
        for (int x = 0; x < out_w; ++x) {
            const Tap& u = tx[std::size_t(x)];
            const float wx1 = u.w1, wx0 = 1.0f - u.w1;
            for (int c = 0; c < 3; ++c) {
                float top = wx0 * r0[u.i0 * 3 + c] + wx1 * r0[u.i1 * 3 + c];
                float bot = wx0 * r1[u.i0 * 3 + c] + wx1 * r1[u.i1 * 3 + c];
                row[std::size_t(x) * 3 + c] = wy0 * top + wy1 * bot;
            }
        }
        std::uint8_t* out = dst.data.data() + std::size_t(y) * out_w * 3;
        for (std::size_t i = 0; i < row.size(); ++i)
            out[i] = std::uint8_t(std::lround(std::clamp(row[i], 0.0f, 255.0f)));
    }
    return dst;
}

Image resize_shorter_center_crop(const Image& src, int target) {
    check(target > 0, Errc::InvalidSize, "center crop: invalid target");
    int w, h;
    if (src.width <= src.height) {
        w = target;
        h = std::max(target, int(std::lround(double(src.height) * target / src.width)));
    } else {
        h = target;
        w = std::max(target, int(std::lround(double(src.width) * target / src.height)));
    }
    Image r = resize_bilinear(src, w, h);
    int x0 = (w - target) / 2;
    int y0 = (h - target) / 2;
    Image out(target, target);
    for (int y = 0; y < target; ++y) {
        const std::uint8_t* s = r.px(x0, y0 + y);
        std::copy(s, s + std::size_t(target) * 3, out.px(0, y));
    }
    return out;
}

}  // namespace pathryoshka
