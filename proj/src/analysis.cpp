#include "mimlite/analysis.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mimlite/image.hpp"

namespace mimlite {

namespace fs = std::filesystem;
using nlohmann::json;

// --- similarity ---------------------------------------------------------------------

Mat linear_gram(const Mat& x) { return x * x.transpose(); }

double hsic_unbiased(const Mat& k, const Mat& l) {
    require(k.rows() == k.cols() && l.rows() == l.cols(), "hsic: Gram matrices must be square");
    require(k.rows() == l.rows(), "hsic: Gram sizes differ");
    const Eigen::Index n = k.rows();
    require(n >= 4, "hsic: needs at least 4 examples");
    Mat kt = k;
    Mat lt = l;
    kt.diagonal().setZero();
    lt.diagonal().setZero();
    const Mat kl = kt * lt;
    const double term1 = kl.trace();
    const double term2 =
        kt.sum() * lt.sum() / (static_cast<double>(n - 1) * static_cast<double>(n - 2));
    const double term3 = 2.0 / static_cast<double>(n - 2) * kl.sum();
    return (term1 + term2 - term3) / (static_cast<double>(n) * static_cast<double>(n - 3));
}

void CkaAccumulator::add(const Mat& k, const Mat& l) {
    xy_ += hsic_unbiased(k, l);
    xx_ += hsic_unbiased(k, k);
    yy_ += hsic_unbiased(l, l);
    ++n_;
}

double CkaAccumulator::value(bool* degenerate) const {
    if (degenerate) *degenerate = false;
    if (n_ == 0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    const double xx = xx_ / n_, yy = yy_ / n_, xy = xy_ / n_;
    const double denom_sq = std::max(xx, 0.0) * std::max(yy, 0.0);
    if (!(denom_sq > 0.0) || !std::isfinite(denom_sq)) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return std::clamp(xy / std::sqrt(denom_sq), 0.0, 1.0);
}

double cka(const Mat& x, const Mat& y) {
    require(x.rows() == y.rows(), "cka: example counts differ");
    CkaAccumulator acc;
    acc.add(linear_gram(x), linear_gram(y));
    return acc.value();
}

namespace {

// One Gram example per image (tokens concatenated row-major) or per token.
Mat gram_examples(const Mat& tokens, int batch, GramExamples mode) {
    if (mode == GramExamples::per_token) return tokens;
    const Eigen::Index per = tokens.rows() / batch;
    Mat out(batch, per * tokens.cols());
    for (int b = 0; b < batch; ++b)
        for (Eigen::Index t = 0; t < per; ++t)
            out.block(b, t * tokens.cols(), 1, tokens.cols()) = tokens.row(b * per + t);
    return out;
}

}  // namespace

SimilarityMatrix layer_similarity_matrix(const VitEncoder& a, const VitEncoder& b,
                                         const std::vector<Image>& data, int batch_size,
                                         int max_batches, GramExamples mode) {
    require(batch_size > 0, "similarity: batch size must be positive");
    require(!data.empty(), "similarity: empty dataset");
    if (mode == GramExamples::per_token)
        require(a.cfg.tokens_per_image() == b.cfg.tokens_per_image(),
                "similarity: per-token mode needs matching token grids");

    const int la = a.cfg.depth + 1, lb = b.cfg.depth + 1;
    std::vector<std::vector<CkaAccumulator>> acc(
        static_cast<std::size_t>(la), std::vector<CkaAccumulator>(static_cast<std::size_t>(lb)));

    ag::NoGradGuard frozen;
    int batches_done = 0;
    for (std::size_t at = 0; at + 1 <= data.size(); at += static_cast<std::size_t>(batch_size)) {
        if (max_batches > 0 && batches_done >= max_batches) break;
        const int bsz = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - at));
        if (mode == GramExamples::per_image && bsz < 4) break;  // HSIC needs >= 4 examples
        std::vector<Image> batch(data.begin() + static_cast<std::ptrdiff_t>(at),
                                 data.begin() + static_cast<std::ptrdiff_t>(at) + bsz);

        CaptureRequest cap;
        cap.features = true;
        Mat pa = patchify_batch(batch, a.cfg.patch_size, nullptr);
        Mat pb = patchify_batch(batch, b.cfg.patch_size, nullptr);
        EncoderOutput oa = a.forward(pa, bsz, nullptr, cap);
        EncoderOutput ob = b.forward(pb, bsz, nullptr, cap);

        std::vector<Mat> ga(static_cast<std::size_t>(la)), gb(static_cast<std::size_t>(lb));
        for (int i = 0; i < la; ++i)
            ga[static_cast<std::size_t>(i)] = linear_gram(gram_examples(
                ag::value(oa.features[static_cast<std::size_t>(i)].tokens), bsz, mode));
        for (int j = 0; j < lb; ++j)
            gb[static_cast<std::size_t>(j)] = linear_gram(gram_examples(
                ag::value(ob.features[static_cast<std::size_t>(j)].tokens), bsz, mode));
        for (int i = 0; i < la; ++i)
            for (int j = 0; j < lb; ++j)
                acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].add(
                    ga[static_cast<std::size_t>(i)], gb[static_cast<std::size_t>(j)]);
        ++batches_done;
    }
    require(batches_done > 0, "similarity: no usable batches (need at least 4 images)");

    SimilarityMatrix sim;
    sim.values.resize(la, lb);
    for (int i = 0; i < la; ++i) sim.row_layers.push_back(i);
    for (int j = 0; j < lb; ++j) sim.col_layers.push_back(j);
    for (int i = 0; i < la; ++i)
        for (int j = 0; j < lb; ++j) {
            bool degenerate = false;
            sim.values(i, j) =
                acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].value(&degenerate);
            if (degenerate) ++sim.degenerate_cells;
        }
    return sim;
}

// --- attention geometry -----------------------------------------------------------------

double attention_distance(const Mat& probs, const TokenGrid& grid) {
    const int l = grid.count();
    require(l > 0, "attention distance: empty grid");
    require(probs.cols() == l, "attention distance: key count does not match grid");
    require(probs.rows() > 0 && probs.rows() % l == 0,
            "attention distance: query rows must be a multiple of the grid size");
    Mat dist(l, l);
    for (int q = 0; q < l; ++q) {
        const int qy = q / grid.cols, qx = q % grid.cols;
        for (int k = 0; k < l; ++k) {
            const int ky = k / grid.cols, kx = k % grid.cols;
            dist(q, k) = std::hypot(static_cast<double>(qy - ky), static_cast<double>(qx - kx));
        }
    }
    double sum = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const int q = static_cast<int>(r % l);
        sum += probs.row(r).dot(dist.row(q));
    }
    return sum / static_cast<double>(probs.rows());
}

double attention_entropy(const Mat& probs) {
    require(probs.rows() > 0 && probs.cols() > 0, "attention entropy: empty input");
    double sum = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        double h = 0.0;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const double p = probs(r, c);
            if (p > 0.0) h -= p * std::log(p);
        }
        sum += h;
    }
    return sum / static_cast<double>(probs.rows());
}

AttentionStats collect_attention_stats(const VitEncoder& model,
                                       const std::vector<Image>& data, int batch_size,
                                       int max_batches) {
    require(batch_size > 0, "attention stats: batch size must be positive");
    require(!data.empty(), "attention stats: empty dataset");
    const int depth = model.cfg.depth, heads = model.cfg.num_heads;
    const int l = model.cfg.tokens_per_image();
    const TokenGrid grid{model.cfg.image_size / model.cfg.patch_size,
                         model.cfg.image_size / model.cfg.patch_size};

    std::vector<std::vector<double>> dist_sum(
        static_cast<std::size_t>(depth), std::vector<double>(static_cast<std::size_t>(heads)));
    std::vector<std::vector<double>> ent_sum = dist_sum;
    long rows_total = 0;

    ag::NoGradGuard frozen;
    int batches_done = 0;
    for (std::size_t at = 0; at < data.size(); at += static_cast<std::size_t>(batch_size)) {
        if (max_batches > 0 && batches_done >= max_batches) break;
        const int bsz = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - at));
        std::vector<Image> batch(data.begin() + static_cast<std::ptrdiff_t>(at),
                                 data.begin() + static_cast<std::ptrdiff_t>(at) + bsz);
        CaptureRequest cap;
        cap.attention = true;
        Mat patches = patchify_batch(batch, model.cfg.patch_size, nullptr);
        EncoderOutput out = model.forward(patches, bsz, nullptr, cap);
        const Eigen::Index rows_per_head = static_cast<Eigen::Index>(bsz) * l;
        for (int li = 0; li < depth; ++li) {
            const Mat& stack = ag::value(out.attention[static_cast<std::size_t>(li)].probs);
            for (int h = 0; h < heads; ++h) {
                Mat slice = stack.middleRows(h * rows_per_head, rows_per_head);
                dist_sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(h)] +=
                    attention_distance(slice, grid) * static_cast<double>(rows_per_head);
                ent_sum[static_cast<std::size_t>(li)][static_cast<std::size_t>(h)] +=
                    attention_entropy(slice) * static_cast<double>(rows_per_head);
            }
        }
        rows_total += rows_per_head;
        ++batches_done;
    }
    require(rows_total > 0, "attention stats: no batches processed");

    AttentionStats stats;
    stats.distance = dist_sum;
    stats.entropy = ent_sum;
    for (int li = 0; li < depth; ++li)
        for (int h = 0; h < heads; ++h) {
            stats.distance[static_cast<std::size_t>(li)][static_cast<std::size_t>(h)] /=
                static_cast<double>(rows_total);
            stats.entropy[static_cast<std::size_t>(li)][static_cast<std::size_t>(h)] /=
                static_cast<double>(rows_total);
        }
    return stats;
}

// --- partial weight transfer ----------------------------------------------------------------

VitEncoder reserve_leading_blocks(const VitEncoder& source, const ModelConfig& cfg,
                                  int keep_blocks, std::uint64_t seed) {
    cfg.validate();
    require(keep_blocks >= 0, "reserve: keep count must be non-negative");
    require(keep_blocks <= source.cfg.depth && keep_blocks <= cfg.depth,
            "reserve: keep count exceeds available depth");
    require(source.cfg.embed_dim == cfg.embed_dim && source.cfg.num_heads == cfg.num_heads &&
                source.cfg.mlp_ratio == cfg.mlp_ratio &&
                source.cfg.patch_size == cfg.patch_size &&
                source.cfg.in_channels == cfg.in_channels,
            "reserve: source and target module shapes differ");

    VitEncoder out = VitEncoder::build(cfg, seed);
    auto copy_values = [](const auto& from, const auto& to) {
        std::vector<NamedParam> src, dst;
        from.collect("m", src);
        to.collect("m", dst);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].var->value = src[i].var->value;
    };
    copy_values(source.patch_embed, out.patch_embed);
    for (int i = 0; i < keep_blocks; ++i)
        copy_values(source.blocks[static_cast<std::size_t>(i)],
                    out.blocks[static_cast<std::size_t>(i)]);
    return out;
}

// --- report emission ----------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::vector<std::string> emit_report(const std::string& out_dir, const ReportInputs& inputs) {
    fs::create_directories(out_dir);
    std::vector<std::string> files;
    auto open_out = [&](const std::string& name) {
        std::ofstream f(fs::path(out_dir) / name);
        require(f.good(), "report: cannot write " + name);
        files.push_back(name);
        return f;
    };

    if (inputs.similarity) {
        const SimilarityMatrix& sim = *inputs.similarity;
        {
            std::ofstream f = open_out("cka.csv");
            f << "row_layer,col_layer,cka\n";
            for (Eigen::Index i = 0; i < sim.values.rows(); ++i)
                for (Eigen::Index j = 0; j < sim.values.cols(); ++j)
                    f << sim.row_layers[static_cast<std::size_t>(i)] << ','
                      << sim.col_layers[static_cast<std::size_t>(j)] << ','
                      << fmt_double(sim.values(i, j)) << '\n';
        }
        save_png(render_heatmap(sim.values, 24, 0.0, 1.0),
                 (fs::path(out_dir) / "cka_heatmap.png").string());
        files.push_back("cka_heatmap.png");
    }

    if (inputs.attention) {
        const AttentionStats& st = *inputs.attention;
        {
            std::ofstream f = open_out("attention_distance.csv");
            f << "layer,head,distance\n";
            for (std::size_t li = 0; li < st.distance.size(); ++li)
                for (std::size_t h = 0; h < st.distance[li].size(); ++h)
                    f << li + 1 << ',' << h << ',' << fmt_double(st.distance[li][h]) << '\n';
        }
        {
            std::ofstream f = open_out("attention_entropy.csv");
            f << "layer,head,entropy\n";
            for (std::size_t li = 0; li < st.entropy.size(); ++li)
                for (std::size_t h = 0; h < st.entropy[li].size(); ++h)
                    f << li + 1 << ',' << h << ',' << fmt_double(st.entropy[li][h]) << '\n';
        }
        auto plot = [&](const std::vector<std::vector<double>>& groups,
                        const std::string& name) {
            double hi = 0.0;
            for (const auto& g : groups)
                for (double v : g) hi = std::max(hi, v);
            save_png(render_boxplot(groups, 64 * static_cast<int>(groups.size()) + 16, 240,
                                    0.0, hi * 1.05 + 1e-9),
                     (fs::path(out_dir) / name).string());
            files.push_back(name);
        };
        plot(st.distance, "attention_distance_boxplot.png");
        plot(st.entropy, "attention_entropy_boxplot.png");
    }

    std::sort(files.begin(), files.end());
    json manifest;
    manifest["files"] = files;
    manifest["metadata"] = inputs.metadata;
    if (inputs.similarity)
        manifest["degenerate_cells"] = inputs.similarity->degenerate_cells;
    {
        std::ofstream f(fs::path(out_dir) / "manifest.json");
        require(f.good(), "report: cannot write manifest.json");
        f << manifest.dump(2) << '\n';
    }
    files.push_back("manifest.json");
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace mimlite
