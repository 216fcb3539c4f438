#pragma once

#include "mimlite/vit.hpp"

namespace mimlite {

// --- decoder configuration -----------------------------------------------------

struct DecoderConfig {
    int depth = 1;
    int embed_dim = 96;
    int num_heads = 3;
    double mlp_ratio = 4.0;

    void validate() const;
};

// One narrow block: enough capacity to reconstruct pixels without stealing
// semantic work from the encoder.
DecoderConfig light_decoder_config();

// --- masking ----------------------------------------------------------------------

// Random partition keeping floor(total * (1 - ratio)) tokens, at least one.
MaskPlan random_mask(int total, double ratio, Rng& rng);
std::vector<MaskPlan> random_mask_batch(int batch, int total, double ratio, Rng& rng);

// --- reconstruction targets ----------------------------------------------------------

struct ReconTargets {
    Mat values;  // (batch * tokens) x patch_dim
    bool normalized = false;
};

// Per-patch standardisation: each row is centred and divided by
// sqrt(max(variance, eps)), so constant patches stay finite.
ReconTargets reconstruction_targets(const Mat& patches, bool normalize, double eps = 1e-6);

// --- decoder ----------------------------------------------------------------------------

class MaeDecoder {
public:
    DecoderConfig cfg;
    int enc_dim = 0;
    int patch_dim = 0;
    TokenGrid grid;
    Linear embed;         // encoder width -> decoder width
    ag::Var mask_token;   // 1 x decoder width, learnable
    Mat pos_embed;        // tokens x decoder width, fixed
    std::vector<Block> blocks;
    Norm final_norm;
    Linear pred;  // decoder width -> patch_dim

    MaeDecoder() = default;
    static MaeDecoder build(const DecoderConfig& cfg, const ModelConfig& enc_cfg,
                            std::uint64_t seed);

    // visible_latents: (batch * kept) x enc_dim in (example, ascending index)
    // order; returns pixel predictions for every token: (batch * tokens) x patch_dim.
    ag::Var forward(const ag::Var& visible_latents, int batch,
                    const std::vector<MaskPlan>& plans) const;

    std::vector<NamedParam> named_params() const;
    std::uint64_t weights_digest() const;
};

// Mean squared error over masked tokens only.
ag::Var mae_loss(const ag::Var& pred, const ReconTargets& targets,
                 const std::vector<MaskPlan>& plans, int batch);

// --- one optimisation step -----------------------------------------------------------------

struct StepStats {
    double recon = 0.0;
    double distill = 0.0;
    double total = 0.0;
};

// Masks the batch, encodes visible tokens, decodes, and applies one AdamW
// update on the reconstruction loss.  `opt` must hold the encoder and decoder
// parameters.  Mask plans are drawn from `rng` (one plan per example).
StepStats pretrain_step(const VitEncoder& encoder, const MaeDecoder& decoder, AdamW& opt,
                        const Mat& patches, int batch, double mask_ratio,
                        bool normalize_targets, double lr, Rng& rng);

}  // namespace mimlite
