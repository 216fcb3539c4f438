#include "mimlite/vit.hpp"

#include <cmath>
#include <numeric>

namespace mimlite {

// --- configuration -----------------------------------------------------------

void ModelConfig::validate() const {
    require(image_size > 0 && patch_size > 0, "model: image and patch size must be positive");
    require(image_size % patch_size == 0, "model: image size must be divisible by patch size");
    require(in_channels > 0, "model: channel count must be positive");
    require(depth > 0, "model: depth must be positive");
    require(embed_dim > 0 && num_heads > 0, "model: width and head count must be positive");
    require(embed_dim % num_heads == 0, "model: width must be divisible by head count");
    require(embed_dim % 4 == 0, "model: width must be divisible by 4 for 2-D sin/cos tables");
    require(mlp_ratio > 0.0, "model: mlp ratio must be positive");
    require(num_classes >= 0, "model: class count must be non-negative");
}

ModelConfig tiny_config(int num_classes) {
    ModelConfig cfg;
    cfg.image_size = 224;
    cfg.patch_size = 16;
    cfg.in_channels = 3;
    cfg.depth = 12;
    cfg.embed_dim = 192;
    cfg.num_heads = 12;
    cfg.mlp_ratio = 4.0;
    cfg.num_classes = num_classes;
    return cfg;
}

// --- patch <-> pixel -------------------------------------------------------------

PatchifyResult patchify(const Image& img, int patch_size) {
    require(patch_size > 0, "patchify: patch size must be positive");
    require(img.height % patch_size == 0 && img.width % patch_size == 0,
            "patchify: image dimensions must be divisible by patch size");
    TokenGrid grid{img.height / patch_size, img.width / patch_size};
    const int pd = patch_size * patch_size * img.channels;
    Mat patches(grid.count(), pd);
    for (int gy = 0; gy < grid.rows; ++gy)
        for (int gx = 0; gx < grid.cols; ++gx) {
            const int row = gy * grid.cols + gx;
            int k = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < img.channels; ++c)
                        patches(row, k++) =
                            img.at(gy * patch_size + py, gx * patch_size + px, c);
        }
    return {std::move(patches), grid};
}

Image unpatchify(const Mat& patches, const TokenGrid& grid, int patch_size, int channels) {
    require(patches.rows() == grid.count(), "unpatchify: row count does not match grid");
    require(patches.cols() == static_cast<Eigen::Index>(patch_size) * patch_size * channels,
            "unpatchify: patch width does not match layout");
    Image img(grid.cols * patch_size, grid.rows * patch_size, channels);
    for (int gy = 0; gy < grid.rows; ++gy)
        for (int gx = 0; gx < grid.cols; ++gx) {
            const int row = gy * grid.cols + gx;
            int k = 0;
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < channels; ++c)
                        img.at(gy * patch_size + py, gx * patch_size + px, c) =
                            patches(row, k++);
        }
    return img;
}

Mat patchify_batch(const std::vector<Image>& batch, int patch_size, TokenGrid* grid_out) {
    require(!batch.empty(), "patchify_batch: empty batch");
    PatchifyResult first = patchify(batch[0], patch_size);
    Mat out(first.grid.count() * static_cast<Eigen::Index>(batch.size()), first.patches.cols());
    out.topRows(first.grid.count()) = first.patches;
    for (std::size_t b = 1; b < batch.size(); ++b) {
        PatchifyResult r = patchify(batch[b], patch_size);
        require(r.grid == first.grid, "patchify_batch: inconsistent image sizes");
        out.middleRows(static_cast<Eigen::Index>(b) * r.grid.count(), r.grid.count()) =
            r.patches;
    }
    if (grid_out) *grid_out = first.grid;
    return out;
}

// --- masking -----------------------------------------------------------------------

void MaskPlan::validate() const {
    require(total > 0, "mask plan: total must be positive");
    require(!visible.empty(), "mask plan: at least one token must stay visible");
    require(static_cast<int>(visible.size() + masked.size()) == total,
            "mask plan: visible and masked must partition the tokens");
    std::vector<bool> seen(static_cast<std::size_t>(total), false);
    auto mark = [&](const std::vector<int>& idx) {
        int prev = -1;
        for (int i : idx) {
            require(i >= 0 && i < total, "mask plan: index out of range");
            require(i > prev, "mask plan: indices must be sorted and unique");
            require(!seen[static_cast<std::size_t>(i)], "mask plan: index appears twice");
            seen[static_cast<std::size_t>(i)] = true;
            prev = i;
        }
    };
    mark(visible);
    mark(masked);
}

// --- fixed position embeddings --------------------------------------------------------

namespace {

// 1-D sin/cos table: [sin | cos], each dim/2 frequencies.
Mat sincos_1d(int dim, const Vec& positions) {
    const int half = dim / 2;
    Mat out(positions.size(), dim);
    for (int i = 0; i < half; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / half);
        for (Eigen::Index p = 0; p < positions.size(); ++p) {
            out(p, i) = std::sin(positions(p) * omega);
            out(p, half + i) = std::cos(positions(p) * omega);
        }
    }
    return out;
}

}  // namespace

Mat sincos_pos_embed_2d(int dim, const TokenGrid& grid) {
    require(dim % 4 == 0, "position table: dim must be divisible by 4");
    require(grid.rows > 0 && grid.cols > 0, "position table: empty grid");
    Vec ys(grid.count()), xs(grid.count());
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            ys(r * grid.cols + c) = static_cast<double>(r);
            xs(r * grid.cols + c) = static_cast<double>(c);
        }
    Mat out(grid.count(), dim);
    out.leftCols(dim / 2) = sincos_1d(dim / 2, ys);
    out.rightCols(dim / 2) = sincos_1d(dim / 2, xs);
    return out;
}

namespace {

double catmull_rom(double p0, double p1, double p2, double p3, double t) {
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

}  // namespace

Mat resample_pos_embed(const Mat& table, const TokenGrid& from, const TokenGrid& to) {
    require(table.rows() == from.count(), "position table: row count does not match grid");
    if (from == to) return table;
    const Eigen::Index dim = table.cols();
    Mat out(to.count(), dim);
    auto src = [&](int r, int c, Eigen::Index d) {
        r = std::clamp(r, 0, from.rows - 1);
        c = std::clamp(c, 0, from.cols - 1);
        return table(r * from.cols + c, d);
    };
    for (int r = 0; r < to.rows; ++r) {
        const double sy = (r + 0.5) * static_cast<double>(from.rows) / to.rows - 0.5;
        const int y1 = static_cast<int>(std::floor(sy));
        const double ty = sy - y1;
        for (int c = 0; c < to.cols; ++c) {
            const double sx = (c + 0.5) * static_cast<double>(from.cols) / to.cols - 0.5;
            const int x1 = static_cast<int>(std::floor(sx));
            const double tx = sx - x1;
            for (Eigen::Index d = 0; d < dim; ++d) {
                double col[4];
                for (int j = 0; j < 4; ++j) {
                    col[j] = catmull_rom(src(y1 - 1 + j, x1 - 1, d), src(y1 - 1 + j, x1, d),
                                         src(y1 - 1 + j, x1 + 1, d), src(y1 - 1 + j, x1 + 2, d),
                                         tx);
                }
                out(r * to.cols + c, d) = catmull_rom(col[0], col[1], col[2], col[3], ty);
            }
        }
    }
    return out;
}

// --- modules -----------------------------------------------------------------------------

Linear::Linear(int in, int out, Rng& rng, double init_std)
    : weight(ag::param(rng.trunc_normal_matrix(in, out, 0.0, init_std))),
      bias(ag::param(Mat::Zero(1, out))) {}

ag::Var Linear::operator()(const ag::Var& x) const {
    return ag::add_rowvec(ag::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".weight", weight, /*decay=*/true, 1.0});
    out.push_back({prefix + ".bias", bias, /*decay=*/false, 1.0});
}

Norm::Norm(int dim)
    : gamma(ag::param(Mat::Ones(1, dim))), beta(ag::param(Mat::Zero(1, dim))) {}

ag::Var Norm::operator()(const ag::Var& x) const {
    return ag::layer_norm(x, gamma, beta, eps);
}

void Norm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    out.push_back({prefix + ".gamma", gamma, /*decay=*/false, 1.0});
    out.push_back({prefix + ".beta", beta, /*decay=*/false, 1.0});
}

Mlp::Mlp(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

ag::Var Mlp::operator()(const ag::Var& x) const { return fc2(ag::gelu(fc1(x))); }

void Mlp::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

SelfAttention::SelfAttention(int dim, int heads, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), heads(heads), dim(dim) {}

SelfAttention::Out SelfAttention::forward(const ag::Var& x, int tokens, bool capture) const {
    const int hd = dim / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
    ag::Var qkv_out = qkv(x);  // (B*T) x 3d
    std::vector<ag::Var> ctx(static_cast<std::size_t>(heads));
    std::vector<ag::Var> all_scores, all_probs;
    if (capture) {
        all_scores.reserve(static_cast<std::size_t>(heads));
        all_probs.reserve(static_cast<std::size_t>(heads));
    }
    for (int h = 0; h < heads; ++h) {
        ag::Var q = ag::slice_cols(qkv_out, h * hd, hd);
        ag::Var k = ag::slice_cols(qkv_out, dim + h * hd, hd);
        ag::Var v = ag::slice_cols(qkv_out, 2 * dim + h * hd, hd);
        ag::Var scores = ag::scale(ag::bmm_nt(q, k, tokens, tokens), scl);
        ag::Var probs = ag::softmax_rows(scores);
        ctx[static_cast<std::size_t>(h)] = ag::bmm_nn(probs, v, tokens, tokens);
        if (capture) {
            all_scores.push_back(scores);
            all_probs.push_back(probs);
        }
    }
    Out out;
    out.out = proj(ag::concat_cols(ctx));
    if (capture) {
        out.scores = ag::concat_rows(all_scores);
        out.probs = ag::concat_rows(all_probs);
    }
    return out;
}

void SelfAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
}

Block::Block(int dim, int heads, double mlp_ratio, Rng& rng)
    : ln1(dim), ln2(dim), attn(dim, heads, rng),
      mlp(dim, static_cast<int>(std::lround(dim * mlp_ratio)), rng) {}

Block::Out Block::forward(const ag::Var& x, int tokens, bool capture_attn) const {
    Out o;
    o.ln1_out = ln1(x);
    o.attn = attn.forward(o.ln1_out, tokens, capture_attn);
    ag::Var mid = ag::add(x, o.attn.out);
    o.out = ag::add(mid, mlp(ln2(mid)));
    return o;
}

void Block::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    mlp.collect(prefix + ".mlp", out);
}

// --- encoder ------------------------------------------------------------------------------

VitEncoder VitEncoder::build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    VitEncoder enc;
    enc.cfg = cfg;
    Rng rng(seed);
    enc.patch_embed = Linear(cfg.patch_dim(), cfg.embed_dim, rng);
    TokenGrid grid{cfg.image_size / cfg.patch_size, cfg.image_size / cfg.patch_size};
    enc.pos_embed = sincos_pos_embed_2d(cfg.embed_dim, grid);
    enc.blocks.reserve(static_cast<std::size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i)
        enc.blocks.emplace_back(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, rng);
    enc.final_norm = Norm(cfg.embed_dim);
    if (cfg.num_classes > 0) {
        // Head draws from a derived stream so backbone weights are identical
        // whether or not a head is attached.
        Rng head_rng = rng.derive("head");
        enc.head = Linear(cfg.embed_dim, cfg.num_classes, head_rng);
    }
    return enc;
}

EncoderOutput VitEncoder::forward(const Mat& patches, int batch,
                                  const std::vector<MaskPlan>* plans,
                                  const CaptureRequest& capture, int attach_layer) const {
    const int l = cfg.tokens_per_image();
    require(batch > 0, "encoder: batch must be positive");
    require(patches.rows() == static_cast<Eigen::Index>(batch) * l,
            "encoder: patch rows do not match batch * tokens");
    require(patches.cols() == cfg.patch_dim(), "encoder: patch width mismatch");
    if (attach_layer < 0) attach_layer = cfg.depth;
    require(attach_layer >= 1 && attach_layer <= cfg.depth,
            "encoder: attach layer out of range");

    EncoderOutput out;
    out.grid = {cfg.image_size / cfg.patch_size, cfg.image_size / cfg.patch_size};
    out.batch = batch;

    // Embed and add the fixed position table, tiled per example.
    ag::Var x = patch_embed(ag::constant(patches));
    Mat pos_tiled(static_cast<Eigen::Index>(batch) * l, cfg.embed_dim);
    for (int b = 0; b < batch; ++b) pos_tiled.middleRows(static_cast<Eigen::Index>(b) * l, l) = pos_embed;
    x = ag::add(x, ag::constant(std::move(pos_tiled)));

    // Keep only the visible tokens when a mask is supplied.
    int kept = l;
    if (plans) {
        require(static_cast<int>(plans->size()) == batch,
                "encoder: one mask plan per example required");
        kept = static_cast<int>((*plans)[0].visible.size());
        std::vector<int> rows;
        rows.reserve(static_cast<std::size_t>(batch) * kept);
        for (int b = 0; b < batch; ++b) {
            const MaskPlan& plan = (*plans)[b];
            plan.validate();
            require(plan.total == l, "encoder: mask plan token count mismatch");
            require(static_cast<int>(plan.visible.size()) == kept,
                    "encoder: all examples must keep the same number of tokens");
            for (int i : plan.visible) rows.push_back(b * l + i);
        }
        x = ag::gather_rows(x, std::move(rows));
    }
    out.tokens_kept = kept;

    if (capture.features) out.features.push_back({0, x});

    ag::Var attach_resid;
    for (int bi = 0; bi < cfg.depth; ++bi) {
        Block::Out bo = blocks[static_cast<std::size_t>(bi)].forward(x, kept, capture.attention);
        // The first norm of block bi+1 (1-based index bi+1) is the normalized
        // view of the previous block's output: feature index bi.
        if (capture.features && bi >= 1) out.features.push_back({bi, bo.ln1_out});
        if (capture.attention)
            out.attention.push_back({bi + 1, cfg.num_heads, bo.attn.scores, bo.attn.probs});
        x = bo.out;
        if (bi + 1 == attach_layer) attach_resid = x;
    }
    out.tokens = final_norm(x);
    if (capture.features) out.features.push_back({cfg.depth, out.tokens});
    out.attach_tokens =
        (attach_layer == cfg.depth) ? out.tokens : final_norm(attach_resid);
    return out;
}

ag::Var VitEncoder::logits(const ag::Var& tokens, int batch) const {
    require(cfg.num_classes > 0, "encoder: no classification head configured");
    require(batch > 0 && tokens->value.rows() % batch == 0,
            "encoder: token rows not divisible by batch");
    const int per = static_cast<int>(tokens->value.rows()) / batch;
    return head(ag::mean_rows_blocks(tokens, per));
}

ag::Var VitEncoder::classify(const std::vector<Image>& batch) const {
    Mat patches = patchify_batch(batch, cfg.patch_size, nullptr);
    EncoderOutput out = forward(patches, static_cast<int>(batch.size()));
    return logits(out.tokens, static_cast<int>(batch.size()));
}

std::vector<NamedParam> VitEncoder::named_params() const {
    std::vector<NamedParam> out;
    patch_embed.collect("patch_embed", out);
    for (int i = 0; i < cfg.depth; ++i)
        blocks[static_cast<std::size_t>(i)].collect("blocks." + std::to_string(i + 1), out);
    final_norm.collect("final_norm", out);
    if (cfg.num_classes > 0) head.collect("head", out);
    return out;
}

long VitEncoder::param_count() const {
    long n = 0;
    for (const auto& p : named_params()) n += static_cast<long>(p.var->value.size());
    return n;
}

std::uint64_t VitEncoder::weights_digest() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& p : named_params()) {
        h = fnv1a(p.name, h);
        h = mat_digest(p.var->value, h);
    }
    return h;
}

}  // namespace mimlite
