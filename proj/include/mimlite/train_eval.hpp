#pragma once

#include <string>
#include <vector>

#include "mimlite/data.hpp"
#include "mimlite/optim.hpp"
#include "mimlite/vit.hpp"

namespace mimlite {

// --- learning-rate rules -----------------------------------------------------------

// Linear scaling: the configured base rate is defined per 256 examples.
double effective_lr(double base_lr, int batch_size);

// Linear warmup from zero to `peak` over `warmup_steps`, then cosine decay to
// `min_lr` at `total_steps`.  `step` counts from 0.
double cosine_schedule(long step, long total_steps, long warmup_steps, double peak,
                       double min_lr);

// Per-depth learning-rate groups.  With decay d and depth L:
//   head + final norm      scale d^0 = 1
//   block i (1-based)      scale d^(L+1-i)
//   patch embedding        scale d^(L+1)
// Returned params are the encoder's own tensors with lr_scale filled in.
struct LrGroup {
    std::string name;
    double scale = 1.0;
    std::vector<std::string> members;
};
std::vector<NamedParam> layerwise_lr_params(const VitEncoder& model, double decay,
                                            std::vector<LrGroup>* groups_out = nullptr);

// --- recipes ----------------------------------------------------------------------

enum class OptimizerKind { adamw, sgd };

struct AugmentConfig {
    bool random_crop = true;   // random resized crop back to the model input size
    bool hflip = true;         // horizontal flip with probability 1/2
    double color_jitter = 0.0; // brightness/contrast/saturation jitter strength
    double mixup_alpha = 0.0;  // Beta(alpha, alpha) pixel/target mixing; 0 = off
};

struct Recipe {
    OptimizerKind optimizer = OptimizerKind::adamw;
    double base_lr = 1e-3;  // per 256 examples; scaled by batch_size
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double momentum = 0.9;
    int epochs = 100;
    int warmup_epochs = 5;
    int batch_size = 128;
    double layerwise_decay = 1.0;  // 1 = uniform lr over depth
    double label_smoothing = 0.0;
    AugmentConfig aug;
    std::uint64_t seed = 0;

    void validate() const;
};

// --- training loops ---------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;        // schedule value at the first step of the epoch
    double train_loss = 0.0;
    double eval_top1 = 0.0;
};

struct TrainResult {
    double final_top1 = 0.0;
    double best_top1 = 0.0;
    std::vector<EpochLog> epochs;
};

// Supervised training of the full encoder (head included) with cross-entropy.
TrainResult finetune(VitEncoder& model, const LabeledData& train,
                     const LabeledData& eval, const Recipe& recipe);

// Top-1 accuracy, no augmentation, no gradients.
double evaluate_top1(const VitEncoder& model, const LabeledData& eval, int batch_size);

// Mean over each image's final-norm tokens: one feature row per image.
Mat extract_gap_features(const VitEncoder& model, const std::vector<Image>& images,
                         int batch_size);

// Multinomial logistic regression on fixed feature rows; returns eval top-1.
// Features are standardised with statistics from the training split.
double train_linear_classifier(const Mat& train_x, const std::vector<int>& train_y,
                               const Mat& eval_x, const std::vector<int>& eval_y,
                               int num_classes, const Recipe& recipe);

// Linear probe: classifier trained on the frozen encoder's pooled features.
TrainResult linear_probe(const VitEncoder& model, const LabeledData& train,
                         const LabeledData& eval, const Recipe& recipe);

// --- augmentation -----------------------------------------------------------------

// One training view of an image at out_size x out_size.
Image augment_image(const Image& img, const AugmentConfig& aug, int out_size, Rng& rng);

// Beta(alpha, alpha) sample (Johnk's rejection method); used for mixup weights.
double beta_sample(double alpha, Rng& rng);

}  // namespace mimlite
