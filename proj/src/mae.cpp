#include "mimlite/mae.hpp"

#include <algorithm>
#include <cmath>

namespace mimlite {

void DecoderConfig::validate() const {
    require(depth > 0, "decoder: depth must be positive");
    require(embed_dim > 0 && num_heads > 0, "decoder: width and head count must be positive");
    require(embed_dim % num_heads == 0, "decoder: width must be divisible by head count");
    require(embed_dim % 4 == 0, "decoder: width must be divisible by 4 for sin/cos tables");
    require(mlp_ratio > 0.0, "decoder: mlp ratio must be positive");
}

DecoderConfig light_decoder_config() { return DecoderConfig{1, 96, 3, 4.0}; }

// --- masking ---------------------------------------------------------------------

MaskPlan random_mask(int total, double ratio, Rng& rng) {
    require(total > 0, "mask: token count must be positive");
    require(ratio >= 0.0 && ratio < 1.0, "mask: ratio must lie in [0, 1)");
    const int keep = std::max(1, static_cast<int>(std::floor(total * (1.0 - ratio))));
    std::vector<int> perm = rng.permutation(total);
    MaskPlan plan;
    plan.total = total;
    plan.visible.assign(perm.begin(), perm.begin() + keep);
    plan.masked.assign(perm.begin() + keep, perm.end());
    std::sort(plan.visible.begin(), plan.visible.end());
    std::sort(plan.masked.begin(), plan.masked.end());
    return plan;
}

std::vector<MaskPlan> random_mask_batch(int batch, int total, double ratio, Rng& rng) {
    std::vector<MaskPlan> plans;
    plans.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) plans.push_back(random_mask(total, ratio, rng));
    return plans;
}

// --- reconstruction targets ----------------------------------------------------------

ReconTargets reconstruction_targets(const Mat& patches, bool normalize, double eps) {
    ReconTargets t;
    t.normalized = normalize;
    if (!normalize) {
        t.values = patches;
        return t;
    }
    require(eps > 0.0, "targets: eps must be positive");
    t.values.resize(patches.rows(), patches.cols());
    const double d = static_cast<double>(patches.cols());
    for (Eigen::Index r = 0; r < patches.rows(); ++r) {
        const double mean = patches.row(r).mean();
        RowVec centered = patches.row(r).array() - mean;
        const double var = centered.squaredNorm() / d;
        t.values.row(r) = centered / std::sqrt(std::max(var, eps));
    }
    return t;
}

// --- decoder ----------------------------------------------------------------------------

MaeDecoder MaeDecoder::build(const DecoderConfig& cfg, const ModelConfig& enc_cfg,
                             std::uint64_t seed) {
    cfg.validate();
    enc_cfg.validate();
    MaeDecoder dec;
    dec.cfg = cfg;
    dec.enc_dim = enc_cfg.embed_dim;
    dec.patch_dim = enc_cfg.patch_dim();
    dec.grid = {enc_cfg.image_size / enc_cfg.patch_size,
                enc_cfg.image_size / enc_cfg.patch_size};
    Rng rng(seed);
    dec.embed = Linear(dec.enc_dim, cfg.embed_dim, rng);
    dec.mask_token = ag::param(rng.trunc_normal_matrix(1, cfg.embed_dim, 0.0, 0.02));
    dec.pos_embed = sincos_pos_embed_2d(cfg.embed_dim, dec.grid);
    dec.blocks.reserve(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i)
        dec.blocks.emplace_back(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, rng);
    dec.final_norm = Norm(cfg.embed_dim);
    dec.pred = Linear(cfg.embed_dim, dec.patch_dim, rng);
    return dec;
}

ag::Var MaeDecoder::forward(const ag::Var& visible_latents, int batch,
                            const std::vector<MaskPlan>& plans) const {
    const int l = grid.count();
    require(static_cast<int>(plans.size()) == batch, "decoder: one plan per example required");
    require(visible_latents->value.cols() == enc_dim, "decoder: latent width mismatch");
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(visible_latents->value.rows()));
    for (int b = 0; b < batch; ++b) {
        require(plans[static_cast<std::size_t>(b)].total == l,
                "decoder: plan token count does not match grid");
        for (int i : plans[static_cast<std::size_t>(b)].visible) rows.push_back(b * l + i);
    }
    require(static_cast<Eigen::Index>(rows.size()) == visible_latents->value.rows(),
            "decoder: latent rows do not match visible token count");

    ag::Var x = embed(visible_latents);
    x = ag::scatter_rows(x, mask_token, std::move(rows), batch * l);
    Mat pos_tiled(static_cast<Eigen::Index>(batch) * l, cfg.embed_dim);
    for (int b = 0; b < batch; ++b)
        pos_tiled.middleRows(static_cast<Eigen::Index>(b) * l, l) = pos_embed;
    x = ag::add(x, ag::constant(std::move(pos_tiled)));
    for (const auto& blk : blocks) x = blk.forward(x, l, false).out;
    return pred(final_norm(x));
}

std::vector<NamedParam> MaeDecoder::named_params() const {
    std::vector<NamedParam> out;
    embed.collect("decoder.embed", out);
    out.push_back({"decoder.mask_token", mask_token, /*decay=*/false, 1.0});
    for (int i = 0; i < cfg.depth; ++i)
        blocks[static_cast<std::size_t>(i)].collect("decoder.blocks." + std::to_string(i + 1),
                                                    out);
    final_norm.collect("decoder.final_norm", out);
    pred.collect("decoder.pred", out);
    return out;
}

std::uint64_t MaeDecoder::weights_digest() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& p : named_params()) {
        h = fnv1a(p.name, h);
        h = mat_digest(p.var->value, h);
    }
    return h;
}

// --- loss -------------------------------------------------------------------------------

ag::Var mae_loss(const ag::Var& pred, const ReconTargets& targets,
                 const std::vector<MaskPlan>& plans, int batch) {
    require(pred->value.rows() == targets.values.rows() &&
                pred->value.cols() == targets.values.cols(),
            "loss: prediction and target shapes differ");
    require(batch > 0 && pred->value.rows() % batch == 0, "loss: rows not divisible by batch");
    const int l = static_cast<int>(pred->value.rows()) / batch;
    require(static_cast<int>(plans.size()) == batch, "loss: one plan per example required");
    std::vector<int> rows;
    for (int b = 0; b < batch; ++b) {
        require(plans[static_cast<std::size_t>(b)].total == l, "loss: plan size mismatch");
        for (int i : plans[static_cast<std::size_t>(b)].masked) rows.push_back(b * l + i);
    }
    require(!rows.empty(), "loss: no masked tokens to score");
    Mat target_rows(static_cast<Eigen::Index>(rows.size()), targets.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        target_rows.row(static_cast<Eigen::Index>(i)) = targets.values.row(rows[i]);
    ag::Var masked_pred = ag::gather_rows(pred, std::move(rows));
    return ag::mse(masked_pred, ag::constant(std::move(target_rows)));
}

// --- one optimisation step ------------------------------------------------------------------

StepStats pretrain_step(const VitEncoder& encoder, const MaeDecoder& decoder, AdamW& opt,
                        const Mat& patches, int batch, double mask_ratio,
                        bool normalize_targets, double lr, Rng& rng) {
    const int l = encoder.cfg.tokens_per_image();
    std::vector<MaskPlan> plans = random_mask_batch(batch, l, mask_ratio, rng);
    ReconTargets targets = reconstruction_targets(patches, normalize_targets);
    EncoderOutput enc_out = encoder.forward(patches, batch, &plans);
    ag::Var pred = decoder.forward(enc_out.tokens, batch, plans);
    ag::Var loss = mae_loss(pred, targets, plans, batch);
    opt.zero_grad();
    ag::backward(loss);
    opt.step(lr);
    StepStats stats;
    stats.recon = ag::item(loss);
    stats.total = stats.recon;
    return stats;
}

}  // namespace mimlite
