#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mimlite/vit.hpp"

namespace mimlite {

// --- similarity ------------------------------------------------------------------

// Linear Gram matrix of row-vector examples.
Mat linear_gram(const Mat& x);

// Unbiased HSIC estimator over two n x n Gram matrices (diagonals are zeroed
// internally); requires n >= 4.
double hsic_unbiased(const Mat& k, const Mat& l);

// Minibatch CKA: each HSIC term is averaged across batches first, then the
// ratio is formed.  Degenerate denominators yield 0 and set the flag.
class CkaAccumulator {
public:
    void add(const Mat& k, const Mat& l);
    double value(bool* degenerate = nullptr) const;
    int batches() const { return n_; }

private:
    double xy_ = 0.0, xx_ = 0.0, yy_ = 0.0;
    int n_ = 0;
};

// Single-batch convenience over raw features (rows = examples).
double cka(const Mat& x, const Mat& y);

// How feature matrices are turned into Gram examples: one row per image
// (tokens concatenated) or one row per token.
enum class GramExamples { per_image, per_token };

struct SimilarityMatrix {
    std::vector<int> row_layers;  // feature indices of model a
    std::vector<int> col_layers;  // feature indices of model b
    Mat values;                   // CKA in [0, 1]
    int degenerate_cells = 0;
};

// All-pairs CKA between the feature records of two models evaluated over the
// same images in deterministic minibatches.  Both models must share the patch
// grid.  Undersized trailing batches (fewer than 4 Gram examples) are skipped.
SimilarityMatrix layer_similarity_matrix(const VitEncoder& a, const VitEncoder& b,
                                         const std::vector<Image>& data, int batch_size,
                                         int max_batches = 0,
                                         GramExamples mode = GramExamples::per_image);

// --- attention geometry ----------------------------------------------------------

// Mean over query rows of the probability-weighted Euclidean distance between
// query and key positions, in grid units (adjacent cells are distance 1).
// Rows must be a multiple of grid.count(); each chunk is one example.
double attention_distance(const Mat& probs, const TokenGrid& grid);

// Mean over query rows of the Shannon entropy -sum p ln p (0 ln 0 = 0).
double attention_entropy(const Mat& probs);

struct AttentionStats {
    // Indexed [layer][head]; layers are in block order (1-based in reports).
    std::vector<std::vector<double>> distance;
    std::vector<std::vector<double>> entropy;
};

// Runs the model over the images (no gradients) and aggregates per-layer,
// per-head attention distance and entropy.
AttentionStats collect_attention_stats(const VitEncoder& model,
                                       const std::vector<Image>& data, int batch_size,
                                       int max_batches = 0);

// --- partial weight transfer ----------------------------------------------------------

// New encoder whose patch embedding and first `keep_blocks` blocks are copied
// from `source`; every deeper module is freshly initialised from `seed`.
VitEncoder reserve_leading_blocks(const VitEncoder& source, const ModelConfig& cfg,
                                  int keep_blocks, std::uint64_t seed);

// --- report emission ---------------------------------------------------------------------

struct ReportInputs {
    std::optional<SimilarityMatrix> similarity;
    std::optional<AttentionStats> attention;
    std::map<std::string, std::string> metadata;  // copied into the manifest
};

// Writes cka.csv / attention_distance.csv / attention_entropy.csv for the
// sections present, renders their plots (PNG), and writes manifest.json
// listing every emitted file.  Returns the emitted file names.
std::vector<std::string> emit_report(const std::string& out_dir, const ReportInputs& inputs);

}  // namespace mimlite
