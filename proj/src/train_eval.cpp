#include "mimlite/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mimlite/util.hpp"

namespace mimlite {

// --- learning-rate rules -----------------------------------------------------------

double effective_lr(double base_lr, int batch_size) {
    require(batch_size >= 1, "effective_lr: batch_size must be >= 1");
    return base_lr * static_cast<double>(batch_size) / 256.0;
}

double cosine_schedule(long step, long total_steps, long warmup_steps, double peak,
                       double min_lr) {
    require(total_steps >= 1, "cosine_schedule: total_steps must be >= 1");
    require(warmup_steps >= 0 && warmup_steps <= total_steps,
            "cosine_schedule: warmup_steps must be in [0, total_steps]");
    require(step >= 0, "cosine_schedule: step must be >= 0");
    if (step < warmup_steps) {
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps == warmup_steps) return peak;
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return min_lr + 0.5 * (peak - min_lr) * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

std::vector<NamedParam> layerwise_lr_params(const VitEncoder& model, double decay,
                                            std::vector<LrGroup>* groups_out) {
    require(decay > 0.0 && decay <= 1.0, "layerwise_lr_params: decay must be in (0, 1]");
    const int depth = model.cfg.depth;
    // Group index g in [0, depth+1]: 0 = patch embedding, 1..depth = blocks,
    // depth+1 = final norm + head.  Scale = decay^(depth+1-g).
    std::vector<LrGroup> groups(depth + 2);
    groups[0].name = "patch_embed";
    for (int i = 1; i <= depth; ++i) groups[i].name = "blocks." + std::to_string(i);
    groups[depth + 1].name = "head";
    for (int g = 0; g < depth + 2; ++g) {
        groups[g].scale = std::pow(decay, depth + 1 - g);
    }

    std::vector<NamedParam> params = model.named_params();
    for (NamedParam& p : params) {
        int g = depth + 1;
        if (p.name.rfind("patch_embed.", 0) == 0) {
            g = 0;
        } else if (p.name.rfind("blocks.", 0) == 0) {
            const std::size_t start = std::string("blocks.").size();
            g = std::stoi(p.name.substr(start, p.name.find('.', start) - start));
        }
        p.lr_scale = groups[g].scale;
        groups[g].members.push_back(p.name);
    }
    if (groups_out) *groups_out = std::move(groups);
    return params;
}

// --- recipes ----------------------------------------------------------------------

void Recipe::validate() const {
    require(base_lr > 0.0, "recipe: base_lr must be positive");
    require(min_lr >= 0.0, "recipe: min_lr must be >= 0");
    require(weight_decay >= 0.0, "recipe: weight_decay must be >= 0");
    require(epochs >= 0, "recipe: epochs must be >= 0");
    require(warmup_epochs >= 0, "recipe: warmup_epochs must be >= 0");
    require(batch_size >= 1, "recipe: batch_size must be >= 1");
    require(layerwise_decay > 0.0 && layerwise_decay <= 1.0,
            "recipe: layerwise_decay must be in (0, 1]");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0,
            "recipe: label_smoothing must be in [0, 1)");
    require(aug.color_jitter >= 0.0, "recipe: color_jitter must be >= 0");
    require(aug.mixup_alpha >= 0.0, "recipe: mixup_alpha must be >= 0");
}

// --- augmentation -----------------------------------------------------------------

double beta_sample(double alpha, Rng& rng) {
    if (alpha <= 0.0) return 1.0;
    // Johnk's method: X = U1^(1/a), Y = U2^(1/a); accept when X + Y <= 1.
    for (;;) {
        const double x = std::pow(rng.uniform(), 1.0 / alpha);
        const double y = std::pow(rng.uniform(), 1.0 / alpha);
        const double s = x + y;
        if (s > 0.0 && s <= 1.0) return x / s;
    }
}

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double luminance(const Image& img, int y, int x) {
    if (img.channels == 1) return img.at(y, x, 0);
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

void jitter_colors(Image& img, double strength, Rng& rng) {
    const double fb = 1.0 + rng.uniform(-strength, strength);  // brightness
    const double fc = 1.0 + rng.uniform(-strength, strength);  // contrast
    const double fs = 1.0 + rng.uniform(-strength, strength);  // saturation
    double mean_lum = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean_lum += luminance(img, y, x);
    mean_lum /= static_cast<double>(img.width) * img.height;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double lum = luminance(img, y, x);
            for (int c = 0; c < img.channels; ++c) {
                double v = img.at(y, x, c) * fb;
                v = lum + (v - lum) * fs;
                v = mean_lum + (v - mean_lum) * fc;
                img.at(y, x, c) = clamp01(v);
            }
        }
    }
}

}  // namespace

Image augment_image(const Image& img, const AugmentConfig& aug, int out_size, Rng& rng) {
    Image view = img;
    if (aug.random_crop) {
        const double area = static_cast<double>(img.width) * img.height;
        int cw = 0, ch = 0, cx = 0, cy = 0;
        bool found = false;
        for (int attempt = 0; attempt < 10 && !found; ++attempt) {
            const double target_area = area * rng.uniform(0.6, 1.0);
            const double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
            const int tw = static_cast<int>(std::lround(std::sqrt(target_area * ratio)));
            const int th = static_cast<int>(std::lround(std::sqrt(target_area / ratio)));
            if (tw >= 1 && th >= 1 && tw <= img.width && th <= img.height) {
                cx = static_cast<int>(rng.uniform_index(img.width - tw + 1));
                cy = static_cast<int>(rng.uniform_index(img.height - th + 1));
                cw = tw;
                ch = th;
                found = true;
            }
        }
        if (!found) {  // central square fallback
            cw = ch = std::min(img.width, img.height);
            cx = (img.width - cw) / 2;
            cy = (img.height - ch) / 2;
        }
        view = crop(view, cx, cy, cw, ch);
    }
    if (view.width != out_size || view.height != out_size) {
        view = resize_bilinear(view, out_size, out_size);
    }
    if (aug.hflip && rng.uniform() < 0.5) view = hflip(view);
    if (aug.color_jitter > 0.0) jitter_colors(view, aug.color_jitter, rng);
    return view;
}

// --- evaluation ---------------------------------------------------------------------

namespace {

Image fit_to_model(const Image& img, int size) {
    if (img.width == size && img.height == size) return img;
    return resize_bilinear(img, size, size);
}

Mat dense_targets(const std::vector<int>& labels, int num_classes, double smoothing) {
    Mat t = Mat::Constant(static_cast<Eigen::Index>(labels.size()), num_classes,
                          smoothing / num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t(static_cast<Eigen::Index>(i), labels[i]) += 1.0 - smoothing;
    }
    return t;
}

int argmax_row(const Mat& m, Eigen::Index row) {
    Eigen::Index best = 0;
    m.row(row).maxCoeff(&best);
    return static_cast<int>(best);
}

}  // namespace

double evaluate_top1(const VitEncoder& model, const LabeledData& eval, int batch_size) {
    require(!eval.images.empty(), "evaluate_top1: empty evaluation set");
    require(batch_size >= 1, "evaluate_top1: batch_size must be >= 1");
    ag::NoGradGuard no_grad;
    const std::size_t n = eval.images.size();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<Image> batch;
        for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(fit_to_model(eval.images[i], model.cfg.image_size));
        }
        const Mat logits = ag::value(model.classify(batch));
        for (std::size_t i = start; i < stop; ++i) {
            if (argmax_row(logits, static_cast<Eigen::Index>(i - start)) == eval.labels[i]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

Mat extract_gap_features(const VitEncoder& model, const std::vector<Image>& images,
                         int batch_size) {
    require(!images.empty(), "extract_gap_features: empty image list");
    ag::NoGradGuard no_grad;
    const std::size_t n = images.size();
    Mat features(static_cast<Eigen::Index>(n), model.cfg.embed_dim);
    const int tokens = model.cfg.tokens_per_image();
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<Image> batch;
        for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(fit_to_model(images[i], model.cfg.image_size));
        }
        const Mat patches = patchify_batch(batch, model.cfg.patch_size, nullptr);
        const EncoderOutput out =
            model.forward(patches, static_cast<int>(batch.size()));
        const Mat& toks = ag::value(out.tokens);
        for (std::size_t i = start; i < stop; ++i) {
            const Eigen::Index block = static_cast<Eigen::Index>(i - start) * tokens;
            features.row(static_cast<Eigen::Index>(i)) =
                toks.middleRows(block, tokens).colwise().mean();
        }
    }
    return features;
}

// --- supervised fine-tuning -----------------------------------------------------------

TrainResult finetune(VitEncoder& model, const LabeledData& train,
                     const LabeledData& eval, const Recipe& recipe) {
    recipe.validate();
    require(model.cfg.num_classes > 0, "finetune: model has no classification head");
    require(train.num_classes == model.cfg.num_classes,
            "finetune: dataset and head disagree on the number of classes");
    require(!train.images.empty(), "finetune: empty training set");

    std::vector<NamedParam> params =
        recipe.layerwise_decay < 1.0
            ? layerwise_lr_params(model, recipe.layerwise_decay)
            : model.named_params();
    std::unique_ptr<AdamW> adamw;
    std::unique_ptr<SgdMomentum> sgd;
    if (recipe.optimizer == OptimizerKind::adamw) {
        adamw = std::make_unique<AdamW>(params, recipe.beta1, recipe.beta2, 1e-8,
                                        recipe.weight_decay);
    } else {
        sgd = std::make_unique<SgdMomentum>(params, recipe.momentum, recipe.weight_decay);
    }
    const auto opt_step = [&](double lr) { adamw ? adamw->step(lr) : sgd->step(lr); };
    const auto opt_zero = [&]() { adamw ? adamw->zero_grad() : sgd->zero_grad(); };

    const std::size_t n = train.images.size();
    const long steps_per_epoch =
        static_cast<long>((n + recipe.batch_size - 1) / recipe.batch_size);
    const long total_steps = steps_per_epoch * recipe.epochs;
    const long warmup_steps =
        std::min<long>(steps_per_epoch * recipe.warmup_epochs, total_steps);
    const double peak = effective_lr(recipe.base_lr, recipe.batch_size);

    Rng order_rng = Rng(recipe.seed).derive("finetune.order");
    Rng aug_rng = Rng(recipe.seed).derive("finetune.aug");
    Rng mix_rng = Rng(recipe.seed).derive("finetune.mixup");

    TrainResult result;
    long global_step = 0;
    for (int epoch = 1; epoch <= recipe.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;
        log.lr = cosine_schedule(global_step, total_steps, warmup_steps, peak,
                                 recipe.min_lr);
        std::vector<int> order = order_rng.permutation(static_cast<int>(n));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += recipe.batch_size) {
            const std::size_t stop = std::min(n, start + recipe.batch_size);
            const int b = static_cast<int>(stop - start);
            std::vector<Image> batch;
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(augment_image(train.images[order[i]], recipe.aug,
                                              model.cfg.image_size, aug_rng));
                labels.push_back(train.labels[order[i]]);
            }
            Mat targets = dense_targets(labels, train.num_classes, recipe.label_smoothing);
            if (recipe.aug.mixup_alpha > 0.0 && b > 1) {
                const double lam = beta_sample(recipe.aug.mixup_alpha, mix_rng);
                const std::vector<int> pair = mix_rng.permutation(b);
                std::vector<Image> mixed = batch;
                Mat mixed_targets = targets;
                for (int i = 0; i < b; ++i) {
                    const Image& other = batch[pair[i]];
                    for (std::size_t p = 0; p < mixed[i].data.size(); ++p) {
                        mixed[i].data[p] =
                            lam * mixed[i].data[p] + (1.0 - lam) * other.data[p];
                    }
                    mixed_targets.row(i) =
                        lam * targets.row(i) + (1.0 - lam) * targets.row(pair[i]);
                }
                batch = std::move(mixed);
                targets = std::move(mixed_targets);
            }

            const Mat patches = patchify_batch(batch, model.cfg.patch_size, nullptr);
            const EncoderOutput out = model.forward(patches, b);
            const ag::Var loss =
                ag::cross_entropy_probs(model.logits(out.tokens, b), targets);
            opt_zero();
            ag::backward(loss);
            opt_step(cosine_schedule(global_step, total_steps, warmup_steps, peak,
                                     recipe.min_lr));
            loss_sum += ag::item(loss);
            ++global_step;
        }
        log.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        log.eval_top1 = evaluate_top1(model, eval, recipe.batch_size);
        result.best_top1 = std::max(result.best_top1, log.eval_top1);
        result.final_top1 = log.eval_top1;
        result.epochs.push_back(log);
    }
    if (recipe.epochs == 0) {
        result.final_top1 = evaluate_top1(model, eval, recipe.batch_size);
        result.best_top1 = result.final_top1;
    }
    return result;
}

// --- linear probe -----------------------------------------------------------------------

double train_linear_classifier(const Mat& train_x, const std::vector<int>& train_y,
                               const Mat& eval_x, const std::vector<int>& eval_y,
                               int num_classes, const Recipe& recipe) {
    recipe.validate();
    require(train_x.rows() == static_cast<Eigen::Index>(train_y.size()),
            "train_linear_classifier: feature/label count mismatch");
    require(eval_x.rows() == static_cast<Eigen::Index>(eval_y.size()),
            "train_linear_classifier: eval feature/label count mismatch");
    require(train_x.cols() == eval_x.cols(),
            "train_linear_classifier: train/eval feature width mismatch");
    require(num_classes >= 2, "train_linear_classifier: need at least two classes");

    // Standardise with training-split statistics for optimisation conditioning.
    const RowVec mu = train_x.colwise().mean();
    const RowVec var =
        (train_x.rowwise() - mu).array().square().colwise().mean().matrix();
    const RowVec inv_sd = (var.array() + 1e-8).sqrt().inverse().matrix();
    const Mat xt = (train_x.rowwise() - mu).array().rowwise() * inv_sd.array();
    const Mat xe = (eval_x.rowwise() - mu).array().rowwise() * inv_sd.array();

    Rng rng = Rng(recipe.seed).derive("probe.head");
    ag::Var weight = ag::param(
        rng.trunc_normal_matrix(static_cast<int>(xt.cols()), num_classes, 0.0, 0.02));
    ag::Var bias = ag::param(Mat::Zero(1, num_classes));
    std::vector<NamedParam> params{{"probe.weight", weight, true, 1.0},
                                   {"probe.bias", bias, false, 1.0}};
    AdamW opt(params, recipe.beta1, recipe.beta2, 1e-8, recipe.weight_decay);

    const std::size_t n = static_cast<std::size_t>(xt.rows());
    const long steps_per_epoch =
        static_cast<long>((n + recipe.batch_size - 1) / recipe.batch_size);
    const long total_steps = steps_per_epoch * recipe.epochs;
    const long warmup_steps =
        std::min<long>(steps_per_epoch * recipe.warmup_epochs, total_steps);
    const double peak = effective_lr(recipe.base_lr, recipe.batch_size);

    Rng order_rng = Rng(recipe.seed).derive("probe.order");
    const Mat targets_all = dense_targets(train_y, num_classes, recipe.label_smoothing);
    long global_step = 0;
    for (int epoch = 1; epoch <= recipe.epochs; ++epoch) {
        std::vector<int> order = order_rng.permutation(static_cast<int>(n));
        for (std::size_t start = 0; start < n; start += recipe.batch_size) {
            const std::size_t stop = std::min(n, start + recipe.batch_size);
            const int b = static_cast<int>(stop - start);
            Mat xb(b, xt.cols());
            Mat tb(b, num_classes);
            for (int i = 0; i < b; ++i) {
                xb.row(i) = xt.row(order[start + i]);
                tb.row(i) = targets_all.row(order[start + i]);
            }
            const ag::Var logits =
                ag::add_rowvec(ag::matmul(ag::constant(xb), weight), bias);
            const ag::Var loss = ag::cross_entropy_probs(logits, tb);
            opt.zero_grad();
            ag::backward(loss);
            opt.step(cosine_schedule(global_step, total_steps, warmup_steps, peak,
                                     recipe.min_lr));
            ++global_step;
        }
    }

    const Mat logits = (xe * ag::value(weight)).rowwise() + ag::value(bias).row(0);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        if (argmax_row(logits, i) == eval_y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(eval_y.size());
}

TrainResult linear_probe(const VitEncoder& model, const LabeledData& train,
                         const LabeledData& eval, const Recipe& recipe) {
    require(!train.images.empty() && !eval.images.empty(), "linear_probe: empty split");
    const Mat train_x = extract_gap_features(model, train.images, recipe.batch_size);
    const Mat eval_x = extract_gap_features(model, eval.images, recipe.batch_size);
    const double top1 = train_linear_classifier(train_x, train.labels, eval_x,
                                                eval.labels, train.num_classes, recipe);
    TrainResult result;
    result.final_top1 = top1;
    result.best_top1 = top1;
    EpochLog log;
    log.epoch = recipe.epochs;
    log.eval_top1 = top1;
    result.epochs.push_back(log);
    return result;
}

}  // namespace mimlite
