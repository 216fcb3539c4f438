#include "mimlite/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mimlite/util.hpp"

namespace mimlite {
namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct Palette {
    double fg[3];
    double bg[3];
};

// Foreground/background colours with a guaranteed luminance gap so every
// class stays recoverable under the additive pixel noise.
Palette sample_palette(Rng& rng) {
    Palette p{};
    for (int attempt = 0; attempt < 64; ++attempt) {
        double lf = 0.0;
        double lb = 0.0;
        for (int c = 0; c < 3; ++c) {
            p.fg[c] = rng.uniform();
            p.bg[c] = rng.uniform();
            lf += p.fg[c];
            lb += p.bg[c];
        }
        if (std::abs(lf - lb) / 3.0 >= 0.25) return p;
    }
    p.fg[0] = p.fg[1] = p.fg[2] = 0.9;
    p.bg[0] = p.bg[1] = p.bg[2] = 0.1;
    return p;
}

}  // namespace

Image make_shape_image(int class_id, int size, Rng& rng) {
    require(class_id >= 0 && class_id < 10, "make_shape_image: class_id must be in [0, 10)");
    require(size >= 8, "make_shape_image: size must be >= 8");

    Palette pal = sample_palette(rng);
    double cx = 0.5 + 0.1 * (2.0 * rng.uniform() - 1.0);
    double cy = 0.5 + 0.1 * (2.0 * rng.uniform() - 1.0);
    double radius = 0.30 + 0.15 * rng.uniform();
    double period = 0.12 + 0.08 * rng.uniform();
    double phase = rng.uniform();
    double noise_sigma = 0.03;

    Image img(size, size, 3);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // Pixel centre in unit coordinates.
            double u = (x + 0.5) / size;
            double v = (y + 0.5) / size;
            double du = u - cx;
            double dv = v - cy;
            double r = std::sqrt(du * du + dv * dv);
            bool fg = false;
            switch (class_id) {
                case 0:  // filled disc
                    fg = r <= radius;
                    break;
                case 1:  // square outline
                    fg = std::max(std::abs(du), std::abs(dv)) <= radius &&
                         std::max(std::abs(du), std::abs(dv)) >= radius - 0.08;
                    break;
                case 2:  // filled upward triangle
                    fg = dv >= -radius && dv <= radius &&
                         std::abs(du) <= (dv + radius) / 2.0;
                    break;
                case 3:  // plus sign
                    fg = (std::abs(du) <= 0.07 && std::abs(dv) <= radius) ||
                         (std::abs(dv) <= 0.07 && std::abs(du) <= radius);
                    break;
                case 4:  // horizontal stripes
                    fg = std::fmod(v / period + phase, 1.0) < 0.5;
                    break;
                case 5:  // vertical stripes
                    fg = std::fmod(u / period + phase, 1.0) < 0.5;
                    break;
                case 6:  // diagonal stripes
                    fg = std::fmod((u + v) / period + phase, 1.0) < 0.5;
                    break;
                case 7: {  // checkerboard
                    int iu = static_cast<int>(std::floor(u / period + phase));
                    int iv = static_cast<int>(std::floor(v / period + phase));
                    fg = ((iu + iv) & 1) == 0;
                    break;
                }
                case 8:  // ring
                    fg = r <= radius && r >= radius - 0.09;
                    break;
                case 9:  // two discs, left and right of centre
                    fg = std::hypot(du + radius * 0.6, dv) <= radius * 0.35 ||
                         std::hypot(du - radius * 0.6, dv) <= radius * 0.35;
                    break;
                default:
                    break;
            }
            const double* col = fg ? pal.fg : pal.bg;
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = clamp01(col[c] + noise_sigma * rng.normal());
            }
        }
    }
    return img;
}

void DatasetSpec::validate() const {
    require(image_size >= 8, "dataset: image_size must be >= 8");
    require(train_fraction > 0.0 && train_fraction < 1.0,
            "dataset: train_fraction must be in (0, 1)");
    if (kind == DatasetKind::image_directory) {
        require(!root.empty(), "dataset: image_directory requires a root path");
    } else {
        require(num_classes >= 2, "dataset: num_classes must be >= 2");
        if (kind == DatasetKind::builtin_small) {
            require(num_classes <= 10, "dataset: builtin_small has at most 10 classes");
        }
        require(total >= 2 * num_classes, "dataset: total must cover every class twice");
    }
}

namespace {

SplitDataset split_examples(std::vector<Image> images, std::vector<int> labels,
                            int num_classes, std::vector<std::string> class_names,
                            double train_fraction, std::uint64_t seed, int skipped) {
    const std::size_t n = images.size();
    require(n >= 2, "dataset: need at least two decodable examples");
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    Rng split_rng = Rng(seed).derive("dataset.split");
    split_rng.shuffle(order);

    std::size_t n_train = static_cast<std::size_t>(std::lround(train_fraction * n));
    n_train = std::min(std::max<std::size_t>(n_train, 1), n - 1);

    SplitDataset out;
    out.class_names = std::move(class_names);
    out.skipped_files = skipped;
    out.train.num_classes = num_classes;
    out.eval.num_classes = num_classes;
    for (std::size_t i = 0; i < n; ++i) {
        LabeledData& dst = i < n_train ? out.train : out.eval;
        dst.images.push_back(std::move(images[order[i]]));
        dst.labels.push_back(labels[order[i]]);
    }
    return out;
}

SplitDataset ingest_generated(const DatasetSpec& spec) {
    std::vector<Image> images;
    std::vector<int> labels;
    images.reserve(spec.total);
    labels.reserve(spec.total);

    // Per-class blob means, drawn once so every example of a class shares them.
    std::vector<Mat> means;
    if (spec.kind == DatasetKind::synthetic_blobs) {
        for (int c = 0; c < spec.num_classes; ++c) {
            Rng class_rng = Rng(spec.seed).derive("blobs.class." + std::to_string(c));
            Mat m(spec.image_size * spec.image_size, 3);
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = class_rng.uniform();
            means.push_back(std::move(m));
        }
    }

    for (int i = 0; i < spec.total; ++i) {
        int cls = i % spec.num_classes;
        Rng ex_rng = Rng(spec.seed).derive("dataset.example." + std::to_string(i));
        if (spec.kind == DatasetKind::builtin_small) {
            images.push_back(make_shape_image(cls, spec.image_size, ex_rng));
        } else {
            Image img(spec.image_size, spec.image_size, 3);
            const Mat& mean = means[cls];
            for (int y = 0; y < spec.image_size; ++y)
                for (int x = 0; x < spec.image_size; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = clamp01(mean(y * spec.image_size + x, c) +
                                                  0.08 * ex_rng.normal());
            images.push_back(std::move(img));
        }
        labels.push_back(cls);
    }

    std::vector<std::string> names;
    for (int c = 0; c < spec.num_classes; ++c) names.push_back("class_" + std::to_string(c));
    return split_examples(std::move(images), std::move(labels), spec.num_classes,
                          std::move(names), spec.train_fraction, spec.seed, 0);
}

SplitDataset ingest_directory(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    fs::path root(spec.root);
    if (!fs::is_directory(root)) {
        throw InputError("dataset: root is not a directory: " + spec.root);
    }
    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    }
    std::sort(class_names.begin(), class_names.end());
    if (class_names.size() < 2) {
        throw InputError("dataset: image_directory needs at least two class subdirectories");
    }

    std::vector<Image> images;
    std::vector<int> labels;
    int skipped = 0;
    for (std::size_t cls = 0; cls < class_names.size(); ++cls) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(root / class_names[cls])) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            try {
                Image img = decode_image(file.string());
                if (img.width != spec.image_size || img.height != spec.image_size) {
                    img = resize_bilinear(img, spec.image_size, spec.image_size);
                }
                images.push_back(std::move(img));
                labels.push_back(static_cast<int>(cls));
            } catch (const std::exception&) {
                ++skipped;
            }
        }
    }
    int num_classes = static_cast<int>(class_names.size());
    return split_examples(std::move(images), std::move(labels), num_classes,
                          std::move(class_names), spec.train_fraction, spec.seed, skipped);
}

}  // namespace

SplitDataset ingest_dataset(const DatasetSpec& spec) {
    spec.validate();
    if (spec.kind == DatasetKind::image_directory) return ingest_directory(spec);
    return ingest_generated(spec);
}

}  // namespace mimlite
