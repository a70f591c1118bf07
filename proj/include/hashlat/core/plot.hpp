#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hashlat/core/tensor.hpp"

namespace hashlat {

struct Rgb {
    uint8_t r, g, b;
};

// Minimal raster canvas for emitting loss curves, bar charts and heatmaps as
// PNG files. Text is a tiny built-in 3x5 font (digits, lowercase, a few
// symbols), enough for axis labels.
class Canvas {
public:
    Canvas(int width, int height, Rgb background = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }

    void set(int x, int y, Rgb c);
    void line(int x0, int y0, int x1, int y1, Rgb c);
    void rect(int x0, int y0, int x1, int y1, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
    void text(int x, int y, const std::string& s, Rgb c, int scale = 1);

    void save(const std::string& path) const;

private:
    int width_, height_;
    std::vector<uint8_t> pixels_;
};

// Polyline plot of one or more named series (shared x = index).
void plot_series(const std::string& path, const std::vector<std::string>& names,
                 const std::vector<std::vector<double>>& series, const std::string& title);

// Labeled vertical bars in [0, 1].
void plot_bars(const std::string& path, const std::vector<std::string>& labels,
               const std::vector<double>& values, const std::string& title);

// Grayscale-to-heat rendering of a 2-d field (row-major h x w).
void plot_heatmap(const std::string& path, const std::vector<double>& field, int h, int w,
                  const std::string& title, int cell_scale = 8);

}  // namespace hashlat
