#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "mimlite/data.hpp"
#include "mimlite/image.hpp"

using namespace mimlite;

namespace {

bool same_image(const Image& a, const Image& b) {
    return a.width == b.width && a.height == b.height && a.channels == b.channels &&
           a.data == b.data;
}

}  // namespace

TEST_CASE("shape images are deterministic, in range, and class-distinct") {
    Rng r1(7), r2(7);
    const Image a = make_shape_image(3, 32, r1);
    const Image b = make_shape_image(3, 32, r2);
    CHECK(same_image(a, b));
    CHECK(a.width == 32);
    CHECK(a.channels == 3);
    for (double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Rng r3(7);
    const Image c = make_shape_image(4, 32, r3);
    CHECK_FALSE(same_image(a, c));  // same draw stream, different class geometry
}

TEST_CASE("generated datasets split deterministically with balanced classes") {
    DatasetSpec spec;
    spec.kind = DatasetKind::builtin_small;
    spec.image_size = 16;
    spec.num_classes = 10;
    spec.total = 20;
    spec.train_fraction = 0.8;
    spec.seed = 11;

    const SplitDataset d1 = ingest_dataset(spec);
    const SplitDataset d2 = ingest_dataset(spec);

    // Oracle: 0.8 * 20 = 16 train, remainder eval.
    CHECK(d1.train.size() == 16);
    CHECK(d1.eval.size() == 4);
    CHECK(d1.train.num_classes == 10);
    CHECK(d1.skipped_files == 0);

    CHECK(d1.train.labels == d2.train.labels);
    CHECK(d1.eval.labels == d2.eval.labels);
    for (std::size_t i = 0; i < d1.train.size(); ++i) {
        CHECK(same_image(d1.train.images[i], d2.train.images[i]));
    }

    // 20 examples round-robin over 10 classes: exactly two of each overall.
    std::map<int, int> counts;
    for (int y : d1.train.labels) ++counts[y];
    for (int y : d1.eval.labels) ++counts[y];
    for (int c = 0; c < 10; ++c) CHECK(counts[c] == 2);

    DatasetSpec other = spec;
    other.seed = 12;
    const SplitDataset d3 = ingest_dataset(other);
    CHECK(d1.train.labels != d3.train.labels);  // different seed, different split
}

TEST_CASE("synthetic blobs are nearest-mean separable") {
    DatasetSpec spec;
    spec.kind = DatasetKind::synthetic_blobs;
    spec.image_size = 8;
    spec.num_classes = 4;
    spec.total = 200;
    spec.train_fraction = 0.5;
    spec.seed = 3;
    const SplitDataset d = ingest_dataset(spec);

    // Oracle classifier: per-class mean over the training split, then
    // nearest-mean assignment of the eval split.  Blob noise is small relative
    // to the gap between independent uniform class means, so this should be
    // nearly perfect; anything less means the generator is broken.
    std::vector<std::vector<double>> means(4);
    std::vector<int> counts(4, 0);
    for (std::size_t i = 0; i < d.train.size(); ++i) {
        const Image& img = d.train.images[i];
        auto& m = means[d.train.labels[i]];
        if (m.empty()) m.assign(img.data.size(), 0.0);
        for (std::size_t p = 0; p < img.data.size(); ++p) m[p] += img.data[p];
        ++counts[d.train.labels[i]];
    }
    for (int c = 0; c < 4; ++c) {
        CHECK(counts[c] > 0);
        for (double& v : means[c]) v /= counts[c];
    }
    int correct = 0;
    for (std::size_t i = 0; i < d.eval.size(); ++i) {
        const Image& img = d.eval.images[i];
        int best = -1;
        double best_dist = 0.0;
        for (int c = 0; c < 4; ++c) {
            double dist = 0.0;
            for (std::size_t p = 0; p < img.data.size(); ++p) {
                const double diff = img.data[p] - means[c][p];
                dist += diff * diff;
            }
            if (best < 0 || dist < best_dist) {
                best = c;
                best_dist = dist;
            }
        }
        if (best == d.eval.labels[i]) ++correct;
    }
    CHECK(static_cast<double>(correct) / d.eval.size() >= 0.98);
}

TEST_CASE("image directory ingestion skips undecodable files and resizes") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "mimlite_dataset_test";
    fs::remove_all(root);
    fs::create_directories(root / "cats");
    fs::create_directories(root / "dogs");

    Rng rng(5);
    int idx = 0;
    for (const char* cls : {"cats", "dogs"}) {
        for (int i = 0; i < 3; ++i) {
            Image img(12, 10, 3);
            for (double& v : img.data) v = rng.uniform();
            const fs::path p = root / cls / ("img" + std::to_string(idx++) + ".ppm");
            save_ppm(img, p.string());
        }
    }
    {
        std::ofstream bad(root / "cats" / "broken.ppm");
        bad << "not an image";
    }

    DatasetSpec spec;
    spec.kind = DatasetKind::image_directory;
    spec.root = root.string();
    spec.image_size = 16;
    spec.train_fraction = 0.67;
    spec.seed = 9;
    const SplitDataset d = ingest_dataset(spec);

    CHECK(d.class_names == std::vector<std::string>{"cats", "dogs"});
    CHECK(d.skipped_files == 1);
    CHECK(d.train.size() + d.eval.size() == 6);
    CHECK(d.train.num_classes == 2);
    for (const Image& img : d.train.images) {
        CHECK(img.width == 16);
        CHECK(img.height == 16);
    }
    const SplitDataset again = ingest_dataset(spec);
    CHECK(d.train.labels == again.train.labels);

    fs::remove_all(root);
}

TEST_CASE("dataset spec validation rejects nonsense") {
    DatasetSpec spec;
    spec.train_fraction = 1.5;
    CHECK_THROWS_AS(ingest_dataset(spec), InputError);
    spec.train_fraction = 0.8;
    spec.kind = DatasetKind::builtin_small;
    spec.num_classes = 30;
    CHECK_THROWS_AS(ingest_dataset(spec), InputError);
    spec.num_classes = 10;
    spec.kind = DatasetKind::image_directory;
    spec.root = "/nonexistent/definitely/missing";
    CHECK_THROWS_AS(ingest_dataset(spec), InputError);
}
