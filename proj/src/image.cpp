#include "mimlite/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace mimlite {

// --- PPM (binary P6) -----------------------------------------------------------

Image load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open image file: " + path);
    std::string magic;
    f >> magic;
    require(magic == "P6", "unsupported PPM variant in " + path + " (need binary P6)");
    auto next_int = [&]() {
        // Skip whitespace and '#' comment lines between header fields.
        int ch = f.get();
        while (ch != EOF && (std::isspace(ch) || ch == '#')) {
            if (ch == '#')
                while (ch != EOF && ch != '\n') ch = f.get();
            ch = f.get();
        }
        require(ch != EOF, "truncated PPM header in " + path);
        int v = 0;
        while (ch != EOF && std::isdigit(ch)) {
            v = v * 10 + (ch - '0');
            ch = f.get();
        }
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    require(w > 0 && h > 0, "invalid PPM dimensions in " + path);
    require(maxval == 255, "unsupported PPM max value in " + path);
    // next_int consumed the single whitespace byte after maxval via its loop exit;
    // pixel data starts at the current stream position.
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(f.gcount() == static_cast<std::streamsize>(raw.size()),
            "truncated PPM pixel data in " + path);
    Image img(w, h, 3);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    require(img.channels == 3, "PPM output requires 3 channels");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write image file: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>(
            std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// --- PNG -------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

Image load_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, "cannot open image file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw InputError("png info allocation failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> raw;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw InputError("malformed PNG file: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    require(stride == static_cast<std::size_t>(w) * 3, "unexpected PNG row layout");
    raw.resize(stride * h);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = raw.data() + y * stride;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    Image img(static_cast<int>(w), static_cast<int>(h), 3);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

void save_png(const Image& img, const std::string& path) {
    require(img.channels == 3, "PNG output requires 3 channels");
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, "cannot write image file: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw InputError("png info allocation failed");
    }
    std::vector<unsigned char> raw(img.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>(
            std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] =
            raw.data() + static_cast<std::size_t>(y) * img.width * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw InputError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image decode_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open image file: " + path);
    unsigned char magic[2] = {0, 0};
    f.read(reinterpret_cast<char*>(magic), 2);
    f.close();
    if (magic[0] == 'P' && magic[1] == '6') return load_ppm(path);
    if (magic[0] == 0x89 && magic[1] == 'P') return load_png(path);
    throw InputError("unrecognised image format: " + path);
}

// --- transforms ----------------------------------------------------------------------

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    require(out_w > 0 && out_h > 0, "resize: output size must be positive");
    if (out_w == img.width && out_h == img.height) return img;
    Image out(out_w, out_h, img.channels);
    for (int y = 0; y < out_h; ++y) {
        const double sy =
            std::clamp((y + 0.5) * img.height / static_cast<double>(out_h) - 0.5, 0.0,
                       static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx =
                std::clamp((x + 0.5) * img.width / static_cast<double>(out_w) - 0.5, 0.0,
                           static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
                const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
                out.at(y, x, c) = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
    require(x0 >= 0 && y0 >= 0 && w > 0 && h > 0 && x0 + w <= img.width &&
                y0 + h <= img.height,
            "crop: window out of bounds");
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

Image hflip(const Image& img) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

// --- plotting ------------------------------------------------------------------------

namespace {

// Compact perceptual ramp (dark blue -> teal -> green -> yellow).
void colormap(double t, double& r, double& g, double& b) {
    static const double stops[6][3] = {
        {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
        {0.164, 0.471, 0.558}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};
    t = std::clamp(t, 0.0, 1.0) * 5.0;
    const int i = std::min(static_cast<int>(t), 4);
    const double f = t - i;
    r = stops[i][0] * (1 - f) + stops[i + 1][0] * f;
    g = stops[i][1] * (1 - f) + stops[i + 1][1] * f;
    b = stops[i][2] * (1 - f) + stops[i + 1][2] * f;
}

void fill_rect(Image& img, int x0, int y0, int w, int h, double r, double g, double b) {
    for (int y = std::max(0, y0); y < std::min(img.height, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(img.width, x0 + w); ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
}

}  // namespace

Image render_heatmap(const Mat& values, int cell_px, double vmin, double vmax) {
    require(values.size() > 0, "heatmap: empty matrix");
    require(cell_px > 0, "heatmap: cell size must be positive");
    const double span = (vmax > vmin) ? (vmax - vmin) : 1.0;
    Image img(static_cast<int>(values.cols()) * cell_px,
              static_cast<int>(values.rows()) * cell_px, 3);
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            double cr, cg, cb;
            colormap((values(r, c) - vmin) / span, cr, cg, cb);
            fill_rect(img, static_cast<int>(c) * cell_px, static_cast<int>(r) * cell_px,
                      cell_px, cell_px, cr, cg, cb);
        }
    return img;
}

Image render_boxplot(const std::vector<std::vector<double>>& groups, int width, int height,
                     double vmin, double vmax) {
    require(!groups.empty(), "boxplot: no groups");
    require(width > 0 && height > 0, "boxplot: bad canvas size");
    Image img(width, height, 3);
    fill_rect(img, 0, 0, width, height, 1.0, 1.0, 1.0);
    const int margin = 8;
    const double span = (vmax > vmin) ? (vmax - vmin) : 1.0;
    auto to_y = [&](double v) {
        const double t = std::clamp((v - vmin) / span, 0.0, 1.0);
        return margin + static_cast<int>((1.0 - t) * (height - 2 * margin));
    };
    const int slot = (width - 2 * margin) / static_cast<int>(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<double> v = groups[gi];
        if (v.empty()) continue;
        std::sort(v.begin(), v.end());
        auto quant = [&](double q) {
            const double pos = q * (static_cast<double>(v.size()) - 1.0);
            const std::size_t i = static_cast<std::size_t>(pos);
            const double f = pos - static_cast<double>(i);
            return (i + 1 < v.size()) ? v[i] * (1 - f) + v[i + 1] * f : v[i];
        };
        const int cx = margin + static_cast<int>(gi) * slot + slot / 2;
        const int bw = std::max(4, slot / 2);
        const int y_lo = to_y(v.front()), y_hi = to_y(v.back());
        const int y_q1 = to_y(quant(0.25)), y_q3 = to_y(quant(0.75)), y_med = to_y(quant(0.5));
        fill_rect(img, cx, y_hi, 1, y_lo - y_hi + 1, 0.3, 0.3, 0.3);              // whisker
        fill_rect(img, cx - bw / 2, y_q3, bw, std::max(1, y_q1 - y_q3), 0.164, 0.471, 0.558);
        fill_rect(img, cx - bw / 2, y_med, bw, 1, 1.0, 0.85, 0.1);                // median
    }
    return img;
}

}  // namespace mimlite
