#pragma once

#include <string>
#include <vector>

#include "mimlite/util.hpp"

namespace mimlite {

// Dense raster image: row-major, interleaved channels, values in [0, 1].
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
};

// --- file I/O ----------------------------------------------------------------

// Binary PPM (P6) and PNG (8-bit RGB/RGBA/gray).  Loaders throw InputError on
// malformed files; decode_image dispatches on the file's magic bytes.
Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);
Image decode_image(const std::string& path);

// --- transforms ----------------------------------------------------------------

Image resize_bilinear(const Image& img, int out_w, int out_h);
Image crop(const Image& img, int x0, int y0, int w, int h);
Image hflip(const Image& img);

// --- plotting -------------------------------------------------------------------

// Renders a matrix as a colour-mapped cell grid (used for similarity heatmaps).
Image render_heatmap(const Mat& values, int cell_px, double vmin, double vmax);

// Renders one box (median, quartile box, min/max whiskers) per group.
Image render_boxplot(const std::vector<std::vector<double>>& groups, int width,
                     int height, double vmin, double vmax);

}  // namespace mimlite
