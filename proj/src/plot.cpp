#include "pathryoshka/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pathryoshka {

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

constexpr Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                            {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
constexpr Rgb kAxis{60, 60, 60};
constexpr Rgb kGrid{225, 225, 225};

void put(Image& im, int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= im.width || y >= im.height) return;
    auto* p = im.px(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
}

void draw_line(Image& im, int x0, int y0, int x1, int y1, Rgb c, int thick = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        for (int ox = 0; ox < thick; ++ox)
            for (int oy = 0; oy < thick; ++oy) put(im, x0 + ox, y0 + oy, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

// 3x5 glyphs for tick labels: rows top to bottom, 3 bits each.
const std::uint8_t* glyph(char ch) {
    static const std::uint8_t d0[] = {7, 5, 5, 5, 7}, d1[] = {2, 6, 2, 2, 7}, d2[] = {7, 1, 7, 4, 7},
                              d3[] = {7, 1, 7, 1, 7}, d4[] = {5, 5, 7, 1, 1}, d5[] = {7, 4, 7, 1, 7},
                              d6[] = {7, 4, 7, 5, 7}, d7[] = {7, 1, 2, 2, 2}, d8[] = {7, 5, 7, 5, 7},
                              d9[] = {7, 5, 7, 1, 7}, dot[] = {0, 0, 0, 0, 2}, minus[] = {0, 0, 7, 0, 0},
                              plus[] = {0, 2, 7, 2, 0}, e[] = {0, 7, 7, 4, 7};
    switch (ch) {
        case '0': return d0;
        case '1': return d1;
        case '2': return d2;
        case '3': return d3;
        case '4': return d4;
        case '5': return d5;
        case '6': return d6;
        case '7': return d7;
        case '8': return d8;
        case '9': return d9;
        case '.': return dot;
        case '-': return minus;
        case '+': return plus;
        case 'e': return e;
        default: return nullptr;
    }
}

void draw_text(Image& im, int x, int y, const std::string& s, Rgb c, int scale = 2) {
    int cx = x;
    for (char ch : s) {
        const std::uint8_t* g = glyph(ch);
        if (g) {
            for (int r = 0; r < 5; ++r)
                for (int col = 0; col < 3; ++col)
                    if (g[r] & (4 >> col))
                        for (int sy = 0; sy < scale; ++sy)
                            for (int sx = 0; sx < scale; ++sx)
                                put(im, cx + col * scale + sx, y + r * scale + sy, c);
        }
        cx += 4 * scale;
    }
}

int text_width(const std::string& s, int scale = 2) { return int(s.size()) * 4 * scale; }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct Extent {
    double xmin, xmax, ymin, ymax;
};

Extent extent_of(const std::vector<Series>& series, bool log_x) {
    Extent e{1e300, -1e300, 1e300, -1e300};
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = log_x ? std::log2(std::max(s.x[i], 1e-12)) : s.x[i];
            e.xmin = std::min(e.xmin, x);
            e.xmax = std::max(e.xmax, x);
            e.ymin = std::min(e.ymin, s.y[i]);
            e.ymax = std::max(e.ymax, s.y[i]);
        }
    if (e.xmin > e.xmax) e = {0, 1, 0, 1};
    if (e.xmax - e.xmin < 1e-12) {
        e.xmin -= 0.5;
        e.xmax += 0.5;
    }
    if (e.ymax - e.ymin < 1e-12) {
        e.ymin -= 0.5;
        e.ymax += 0.5;
    }
    const double pad = (e.ymax - e.ymin) * 0.06;
    e.ymin -= pad;
    e.ymax += pad;
    return e;
}

std::vector<double> ticks_of(double lo, double hi, int target = 5) {
    const double span = hi - lo;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (mag * m >= raw) {
            step = mag * m;
            break;
        }
    std::vector<double> out;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12 * span; t += step) out.push_back(t);
    return out;
}

}  // namespace

Image render_line_chart(const std::vector<Series>& series, bool log_x, int width, int height) {
    check(width >= 160 && height >= 120, Errc::ConfigError, "chart too small");
    Image im(width, height);
    std::fill(im.data.begin(), im.data.end(), std::uint8_t(255));

    const int ml = 56, mr = 14, mt = 14, mb = 30;
    const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;
    const Extent e = extent_of(series, log_x);
    auto px = [&](double x) {
        const double xv = log_x ? std::log2(std::max(x, 1e-12)) : x;
        return x0 + int(std::lround((xv - e.xmin) / (e.xmax - e.xmin) * (x1 - x0)));
    };
    auto py = [&](double y) {
        return y0 - int(std::lround((y - e.ymin) / (e.ymax - e.ymin) * (y0 - y1)));
    };

    for (double t : ticks_of(e.ymin, e.ymax)) {
        const int y = py(t);
        draw_line(im, x0, y, x1, y, kGrid);
        const std::string label = fmt(t);
        draw_text(im, x0 - 6 - text_width(label), y - 5, label, kAxis);
    }
    std::vector<double> xticks;
    if (log_x) {
        // ticks at the data points themselves: dims are the story
        for (const auto& s : series)
            for (double x : s.x) xticks.push_back(x);
        std::sort(xticks.begin(), xticks.end());
        xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
    } else {
        xticks = ticks_of(e.xmin, e.xmax, 6);
    }
    for (double t : xticks) {
        const int x = px(t);
        draw_line(im, x, y0, x, y1, kGrid);
        const std::string label = fmt(t);
        draw_text(im, x - text_width(label) / 2, y0 + 6, label, kAxis);
    }

    draw_line(im, x0, y0, x1, y0, kAxis);
    draw_line(im, x0, y0, x0, y1, kAxis);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Rgb c = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
        const Series& s = series[si];
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
            draw_line(im, px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), c, 2);
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const int cx = px(s.x[i]), cy = py(s.y[i]);
            for (int oy = -2; oy <= 2; ++oy)
                for (int ox = -2; ox <= 2; ++ox)
                    if (ox * ox + oy * oy <= 4) put(im, cx + ox, cy + oy, c);
        }
    }
    return im;
}

std::string svg_line_chart(const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool log_x,
                           int width, int height) {
    const int ml = 62, mr = 16, mt = 34, mb = 44;
    const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;
    const Extent e = extent_of(series, log_x);
    auto px = [&](double x) {
        const double xv = log_x ? std::log2(std::max(x, 1e-12)) : x;
        return x0 + (xv - e.xmin) / (e.xmax - e.xmin) * (x1 - x0);
    };
    auto py = [&](double y) { return y0 - (y - e.ymin) / (e.ymax - e.ymin) * (y0 - y1); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";

    for (double t : ticks_of(e.ymin, e.ymax)) {
        const double y = py(t);
        o << "<line x1=\"" << x0 << "\" y1=\"" << y << "\" x2=\"" << x1 << "\" y2=\"" << y
          << "\" stroke=\"#e3e3e3\"/>\n";
        o << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(t)
          << "</text>\n";
    }
    std::vector<double> xticks;
    if (log_x) {
        for (const auto& s : series)
            for (double x : s.x) xticks.push_back(x);
        std::sort(xticks.begin(), xticks.end());
        xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
    } else {
        xticks = ticks_of(e.xmin, e.xmax, 6);
    }
    for (double t : xticks) {
        const double x = px(t);
        o << "<line x1=\"" << x << "\" y1=\"" << y0 << "\" x2=\"" << x << "\" y2=\"" << y1
          << "\" stroke=\"#e3e3e3\"/>\n";
        o << "<text x=\"" << x << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << fmt(t)
          << "</text>\n";
    }
    o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
      << "\" stroke=\"#3c3c3c\"/>\n";
    o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
      << "\" stroke=\"#3c3c3c\"/>\n";
    o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << height - 8 << "\" text-anchor=\"middle\">"
      << x_label << "</text>\n";
    o << "<text x=\"14\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << (y0 + y1) / 2 << ")\">" << y_label << "</text>\n";

    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        o << "<polyline fill=\"none\" stroke=\"" << colors[si % 6] << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
        o << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
              << colors[si % 6] << "\"/>\n";
        o << "<text x=\"" << x1 - 8 << "\" y=\"" << y1 + 16 + 16 * double(si)
          << "\" text-anchor=\"end\" fill=\"" << colors[si % 6] << "\">" << s.name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void save_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::string& path_base, bool log_x) {
    write_png(path_base + ".png", render_line_chart(series, log_x));
    std::ofstream svg(path_base + ".svg");
    check(bool(svg), Errc::IoError, "cannot write " + path_base + ".svg");
    svg << svg_line_chart(series, title, x_label, y_label, log_x);
}

Image upscale_nearest(const Image& src, int factor) {
    check(factor >= 1, Errc::InvalidSize, "upscale factor must be >= 1");
    Image out(src.width * factor, src.height * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const std::uint8_t* s = src.px(x / factor, y / factor);
            std::uint8_t* d = out.px(x, y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
        }
    return out;
}

Image hstack(const std::vector<Image>& images, int gap, std::uint8_t background) {
    check(!images.empty(), Errc::InvalidSize, "nothing to stack");
    int w = gap * int(images.size() - 1), h = 0;
    for (const auto& im : images) {
        w += im.width;
        h = std::max(h, im.height);
    }
    Image out(w, h);
    std::fill(out.data.begin(), out.data.end(), background);
    int xoff = 0;
    for (const auto& im : images) {
        for (int y = 0; y < im.height; ++y)
            for (int x = 0; x < im.width; ++x) {
                const std::uint8_t* s = im.px(x, y);
                std::uint8_t* d = out.px(xoff + x, y);
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
            }
        xoff += im.width + gap;
    }
    return out;
}

}  // namespace pathryoshka
