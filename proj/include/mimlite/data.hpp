#pragma once

#include <string>
#include <vector>

#include "mimlite/image.hpp"
#include "mimlite/rng.hpp"

namespace mimlite {

struct LabeledData {
    std::vector<Image> images;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return images.size(); }
};

enum class DatasetKind {
    builtin_small,     // procedural 10-class shape corpus
    synthetic_blobs,   // per-class mean image + Gaussian noise (linearly separable)
    image_directory,   // root/<class>/<file>.{ppm,png}
};

struct DatasetSpec {
    DatasetKind kind = DatasetKind::builtin_small;
    std::string root;          // image_directory only
    int image_size = 32;
    int num_classes = 10;      // generated corpora
    int total = 2048;          // generated corpora
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SplitDataset {
    LabeledData train;
    LabeledData eval;
    std::vector<std::string> class_names;
    int skipped_files = 0;  // undecodable files in image_directory mode
};

// Deterministic: the same spec always produces the same images and split.
SplitDataset ingest_dataset(const DatasetSpec& spec);

// One procedural example of the given class (0..9), any square size >= 8.
Image make_shape_image(int class_id, int size, Rng& rng);

}  // namespace mimlite
