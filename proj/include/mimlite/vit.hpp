#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mimlite/autograd.hpp"
#include "mimlite/image.hpp"
#include "mimlite/optim.hpp"
#include "mimlite/rng.hpp"

namespace mimlite {

// --- configuration ---------------------------------------------------------------

struct ModelConfig {
    int image_size = 224;
    int patch_size = 16;
    int in_channels = 3;
    int depth = 12;
    int embed_dim = 192;
    int num_heads = 12;
    double mlp_ratio = 4.0;
    int num_classes = 0;  // 0 = no classification head

    void validate() const;  // throws InputError on inconsistent settings
    int tokens_per_image() const {
        return (image_size / patch_size) * (image_size / patch_size);
    }
    int patch_dim() const { return patch_size * patch_size * in_channels; }
    int head_dim() const { return embed_dim / num_heads; }
};

// 5.7M-parameter tiny encoder: 12 blocks, width 192, 12 heads of dim 16.
ModelConfig tiny_config(int num_classes = 1000);

struct TokenGrid {
    int rows = 0, cols = 0;
    int count() const { return rows * cols; }
    bool operator==(const TokenGrid&) const = default;
};

// --- patch <-> pixel -----------------------------------------------------------------

// Splits an image into non-overlapping patches, one row per patch.  Patches are
// ordered row-major over the grid; within a patch the layout is (py, px, channel).
struct PatchifyResult {
    Mat patches;  // tokens x (patch^2 * channels)
    TokenGrid grid;
};
PatchifyResult patchify(const Image& img, int patch_size);
Image unpatchify(const Mat& patches, const TokenGrid& grid, int patch_size, int channels);

// Stacks patchify results for a batch: (batch * tokens) x patch_dim.
Mat patchify_batch(const std::vector<Image>& batch, int patch_size, TokenGrid* grid_out);

// --- masking ---------------------------------------------------------------------------

// Partition of one example's token indices into visible and masked sets.
// Both lists are sorted ascending and together cover [0, total) exactly once.
struct MaskPlan {
    int total = 0;
    std::vector<int> visible;
    std::vector<int> masked;
    void validate() const;
};

// --- fixed position embeddings -----------------------------------------------------------

// 2-D sine/cosine table, layout [sin(y) | cos(y) | sin(x) | cos(x)], dim % 4 == 0.
Mat sincos_pos_embed_2d(int dim, const TokenGrid& grid);

// Bicubic (Catmull-Rom) resampling of a position table onto a new grid.
Mat resample_pos_embed(const Mat& table, const TokenGrid& from, const TokenGrid& to);

// --- modules -------------------------------------------------------------------------------

struct Linear {
    ag::Var weight;  // in x out
    ag::Var bias;    // 1 x out

    Linear() = default;
    Linear(int in, int out, Rng& rng, double init_std = 0.02);
    ag::Var operator()(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Norm {
    ag::Var gamma, beta;  // 1 x dim
    double eps = 1e-6;

    Norm() = default;
    explicit Norm(int dim);
    ag::Var operator()(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(int dim, int hidden, Rng& rng);
    ag::Var operator()(const ag::Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct SelfAttention {
    Linear qkv, proj;
    int heads = 1;
    int dim = 0;

    struct Out {
        ag::Var out;     // same shape as input
        ag::Var scores;  // (heads * batch * tokens) x tokens, pre-softmax, head-major; null unless captured
        ag::Var probs;   // same layout, post-softmax; null unless captured
    };

    SelfAttention() = default;
    SelfAttention(int dim, int heads, Rng& rng);
    // x: (batch * tokens) x dim.  When capture is set, the per-head score and
    // probability blocks are stacked into single graph nodes (gradients flow).
    Out forward(const ag::Var& x, int tokens, bool capture) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct Block {
    Norm ln1, ln2;
    SelfAttention attn;
    Mlp mlp;

    struct Out {
        ag::Var out;      // residual stream after the block
        ag::Var ln1_out;  // normalized input to attention (the "normalized output"
                          // representation of the previous block)
        SelfAttention::Out attn;
    };

    Block() = default;
    Block(int dim, int heads, double mlp_ratio, Rng& rng);
    Out forward(const ag::Var& x, int tokens, bool capture_attn) const;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// --- encoder ----------------------------------------------------------------------------------

struct CaptureRequest {
    bool features = false;
    bool attention = false;
};

// Feature snapshots along the depth of the encoder, in normalized coordinates:
//   index 0      patch embedding + position table (input to block 1)
//   index k      output of the first norm of block k+1, for k in 1..depth-1
//   index depth  output of the final norm
struct FeatureRecord {
    int index = 0;
    ag::Var tokens;  // (batch * tokens_per_example) x dim
};

// Attention tensors for one block; both stacks are head-major:
// row index = head * (batch * tokens) + example * tokens + query.
struct AttentionRecord {
    int layer = 0;  // 1-based block index
    int heads = 0;
    ag::Var scores;  // scaled pre-softmax logits
    ag::Var probs;   // post-softmax rows (each sums to 1)
};

struct EncoderOutput {
    ag::Var tokens;         // (batch * tokens_kept) x dim, after final norm
    ag::Var attach_tokens;  // final-norm view of the attach layer's residual stream
    std::vector<FeatureRecord> features;
    std::vector<AttentionRecord> attention;
    TokenGrid grid;
    int batch = 0;
    int tokens_kept = 0;  // tokens per example seen by the blocks
};

class VitEncoder {
public:
    ModelConfig cfg;
    Linear patch_embed;
    Mat pos_embed;  // tokens x dim, fixed (not learned)
    std::vector<Block> blocks;
    Norm final_norm;
    Linear head;  // only when cfg.num_classes > 0

    VitEncoder() = default;
    static VitEncoder build(const ModelConfig& cfg, std::uint64_t seed);

    // patches: (batch * tokens_per_image) x patch_dim.  When plans are given,
    // only the visible tokens of each example enter the blocks.  attach_layer
    // selects which block's residual stream feeds `attach_tokens` (default:
    // the last block, making attach_tokens == tokens).
    EncoderOutput forward(const Mat& patches, int batch,
                          const std::vector<MaskPlan>* plans = nullptr,
                          const CaptureRequest& capture = {},
                          int attach_layer = -1) const;

    // Global average pooling over each example's tokens followed by the head.
    ag::Var logits(const ag::Var& tokens, int batch) const;

    // Convenience: full forward of an image batch to class logits.
    ag::Var classify(const std::vector<Image>& batch) const;

    std::vector<NamedParam> named_params() const;
    long param_count() const;
    std::uint64_t weights_digest() const;
};

}  // namespace mimlite
