#include "hashlat/core/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hashlat/core/image_io.hpp"

namespace hashlat {

namespace {

// 3x5 glyphs, row-major bits (msb = leftmost). Covers what plot labels need.
struct Glyph {
    char ch;
    uint8_t rows[5];
};

constexpr Glyph kFont[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'_', {0b000, 0b000, 0b000, 0b000, 0b111}}, {':', {0b000, 0b010, 0b000, 0b010, 0b000}},
    {'/', {0b001, 0b001, 0b010, 0b100, 0b100}}, {'%', {0b101, 0b001, 0b010, 0b100, 0b101}},
    {'(', {0b010, 0b100, 0b100, 0b100, 0b010}}, {')', {0b010, 0b001, 0b001, 0b001, 0b010}},
    {'+', {0b000, 0b010, 0b111, 0b010, 0b000}}, {'=', {0b000, 0b111, 0b000, 0b111, 0b000}},
    {' ', {0b000, 0b000, 0b000, 0b000, 0b000}},
    {'a', {0b000, 0b011, 0b101, 0b101, 0b011}}, {'b', {0b100, 0b110, 0b101, 0b101, 0b110}},
    {'c', {0b000, 0b011, 0b100, 0b100, 0b011}}, {'d', {0b001, 0b011, 0b101, 0b101, 0b011}},
    {'e', {0b000, 0b010, 0b101, 0b110, 0b011}}, {'f', {0b001, 0b010, 0b111, 0b010, 0b010}},
    {'g', {0b011, 0b101, 0b011, 0b001, 0b110}}, {'h', {0b100, 0b110, 0b101, 0b101, 0b101}},
    {'i', {0b010, 0b000, 0b010, 0b010, 0b010}}, {'j', {0b001, 0b000, 0b001, 0b101, 0b010}},
    {'k', {0b100, 0b101, 0b110, 0b110, 0b101}}, {'l', {0b010, 0b010, 0b010, 0b010, 0b010}},
    {'m', {0b000, 0b111, 0b111, 0b101, 0b101}}, {'n', {0b000, 0b110, 0b101, 0b101, 0b101}},
    {'o', {0b000, 0b010, 0b101, 0b101, 0b010}}, {'p', {0b000, 0b110, 0b101, 0b110, 0b100}},
    {'q', {0b000, 0b011, 0b101, 0b011, 0b001}}, {'r', {0b000, 0b011, 0b100, 0b100, 0b100}},
    {'s', {0b000, 0b011, 0b010, 0b001, 0b110}}, {'t', {0b010, 0b111, 0b010, 0b010, 0b001}},
    {'u', {0b000, 0b101, 0b101, 0b101, 0b011}}, {'v', {0b000, 0b101, 0b101, 0b101, 0b010}},
    {'w', {0b000, 0b101, 0b101, 0b111, 0b111}}, {'x', {0b000, 0b101, 0b010, 0b010, 0b101}},
    {'y', {0b000, 0b101, 0b011, 0b001, 0b110}}, {'z', {0b000, 0b111, 0b001, 0b010, 0b111}},
};

const Glyph* find_glyph(char ch) {
    char c = ch;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    for (const auto& g : kFont)
        if (g.ch == c) return &g;
    return nullptr;
}

const Rgb kPalette[] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
};

}  // namespace

Canvas::Canvas(int width, int height, Rgb background) : width_(width), height_(height) {
    pixels_.resize(static_cast<size_t>(width) * height * 3);
    for (int i = 0; i < width * height; ++i) {
        pixels_[static_cast<size_t>(i) * 3 + 0] = background.r;
        pixels_[static_cast<size_t>(i) * 3 + 1] = background.g;
        pixels_[static_cast<size_t>(i) * 3 + 2] = background.b;
    }
}

void Canvas::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    size_t off = (static_cast<size_t>(y) * width_ + x) * 3;
    pixels_[off] = c.r;
    pixels_[off + 1] = c.g;
    pixels_[off + 2] = c.b;
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
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

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb c) {
    line(x0, y0, x1, y0, c);
    line(x0, y1, x1, y1, c);
    line(x0, y0, x0, y1, c);
    line(x1, y0, x1, y1, c);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
    int cx = x;
    for (char ch : s) {
        if (const Glyph* g = find_glyph(ch)) {
            for (int row = 0; row < 5; ++row)
                for (int col = 0; col < 3; ++col)
                    if (g->rows[row] & (0b100 >> col))
                        for (int dy = 0; dy < scale; ++dy)
                            for (int dx = 0; dx < scale; ++dx)
                                set(cx + col * scale + dx, y + row * scale + dy, c);
        }
        cx += 4 * scale;
    }
}

void Canvas::save(const std::string& path) const { write_png(path, pixels_, width_, height_); }

void plot_series(const std::string& path, const std::vector<std::string>& names,
                 const std::vector<std::vector<double>>& series, const std::string& title) {
    const int w = 640, h = 400, ml = 56, mr = 16, mt = 28, mb = 32;
    Canvas canvas(w, h);
    canvas.text(ml, 8, title, {0, 0, 0});
    canvas.rect(ml, mt, w - mr, h - mb, {160, 160, 160});

    double lo = 0.0, hi = 1e-12;
    size_t max_len = 1;
    for (const auto& s : series) {
        max_len = std::max(max_len, s.size());
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;

    auto px = [&](size_t i) {
        return ml + static_cast<int>(std::lround(static_cast<double>(i) /
                                                 std::max<size_t>(max_len - 1, 1) *
                                                 (w - ml - mr)));
    };
    auto py = [&](double v) {
        return h - mb - static_cast<int>(std::lround((v - lo) / (hi - lo) * (h - mt - mb)));
    };

    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", hi);
    canvas.text(4, mt - 2, buf, {80, 80, 80});
    std::snprintf(buf, sizeof(buf), "%.3g", lo);
    canvas.text(4, h - mb - 2, buf, {80, 80, 80});

    for (size_t s = 0; s < series.size(); ++s) {
        Rgb c = kPalette[s % 8];
        const auto& v = series[s];
        for (size_t i = 1; i < v.size(); ++i)
            canvas.line(px(i - 1), py(v[i - 1]), px(i), py(v[i]), c);
        if (s < names.size()) {
            int ly = mt + 8 + static_cast<int>(s) * 10;
            canvas.fill_rect(w - mr - 90, ly, w - mr - 82, ly + 6, c);
            canvas.text(w - mr - 78, ly, names[s], {0, 0, 0});
        }
    }
    canvas.save(path);
}

void plot_bars(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<double>& values, const std::string& title) {
    const int w = 480, h = 320, ml = 48, mr = 16, mt = 28, mb = 48;
    Canvas canvas(w, h);
    canvas.text(ml, 8, title, {0, 0, 0});
    canvas.rect(ml, mt, w - mr, h - mb, {160, 160, 160});
    double hi = 1e-12;
    for (double v : values) hi = std::max(hi, v);
    hi = std::max(hi, 1.0);
    const int n = static_cast<int>(values.size());
    const int span = (w - ml - mr) / std::max(n, 1);
    for (int i = 0; i < n; ++i) {
        int x0 = ml + i * span + span / 5;
        int x1 = ml + (i + 1) * span - span / 5;
        int y1 = h - mb;
        int y0 = y1 - static_cast<int>(std::lround(values[static_cast<size_t>(i)] / hi *
                                                   (h - mt - mb)));
        canvas.fill_rect(x0, y0, x1, y1 - 1, kPalette[i % 8]);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", values[static_cast<size_t>(i)]);
        canvas.text(x0, y0 - 8, buf, {0, 0, 0});
        if (i < static_cast<int>(labels.size()))
            canvas.text(x0, h - mb + 6, labels[static_cast<size_t>(i)], {0, 0, 0});
    }
    canvas.save(path);
}

void plot_heatmap(const std::string& path, const std::vector<double>& field, int h, int w,
                  const std::string& title, int cell_scale) {
    double lo = 1e300, hi = -1e300;
    for (double v : field) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) hi = lo + 1.0;
    const int mt = 20;
    Canvas canvas(w * cell_scale, h * cell_scale + mt);
    canvas.text(4, 6, title, {0, 0, 0});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double t = (field[static_cast<size_t>(y) * w + x] - lo) / (hi - lo);
            // black -> red -> yellow -> white
            double r = std::min(1.0, 3.0 * t);
            double g = std::clamp(3.0 * t - 1.0, 0.0, 1.0);
            double b = std::clamp(3.0 * t - 2.0, 0.0, 1.0);
            Rgb c{static_cast<uint8_t>(r * 255), static_cast<uint8_t>(g * 255),
                  static_cast<uint8_t>(b * 255)};
            canvas.fill_rect(x * cell_scale, mt + y * cell_scale, (x + 1) * cell_scale - 1,
                             mt + (y + 1) * cell_scale - 1, c);
        }
    }
    canvas.save(path);
}

}  // namespace hashlat
