#pragma once

#include "mimlite/mae.hpp"
#include "mimlite/vit.hpp"

namespace mimlite {

enum class DistillTarget { attention, representation };

struct DistillConfig {
    bool enabled = false;
    DistillTarget target_kind = DistillTarget::attention;
    // Layer selectors are 1-based block indices for attention targets and
    // feature indices (0 = embedding, depth = final norm) for representation
    // targets; -1 means "the deepest layer".
    int teacher_layer = -1;
    int student_layer = -1;
    // Block whose (final-norm viewed) output feeds the pixel decoder; -1 keeps
    // the default coupling at the last block.
    int attach_layer = -1;
    double lambda = 0.0;
    // Attention targets match scaled pre-softmax scores by default; set to
    // compare post-softmax probabilities instead.
    bool use_probabilities = false;
    std::string teacher_checkpoint;

    void validate(const ModelConfig& teacher, const ModelConfig& student) const;
    int resolved_teacher_layer(const ModelConfig& teacher) const;
    int resolved_student_layer(const ModelConfig& student) const;
    int resolved_attach_layer(const ModelConfig& student) const;
};

// Learnable mixer from student heads onto teacher heads (rows: teacher heads).
// Starts as the uniform average so the initial mix is a convex combination.
struct HeadMap {
    ag::Var weights;  // teacher_heads x student_heads
};
HeadMap make_head_map(int teacher_heads, int student_heads);

// Learnable projection from student width onto teacher width.
struct DimMap {
    ag::Var weights;  // student_dim x teacher_dim
};
DimMap make_dim_map(int student_dim, int teacher_dim, Rng& rng);

// MSE between the teacher's per-head attention stack and the head-mixed
// student stack.  Both records must come from forwards over the same token
// set; the teacher side is treated as a constant.
ag::Var attn_distill_loss(const AttentionRecord& teacher, const AttentionRecord& student,
                          const HeadMap& map, bool use_probabilities);

// MSE between teacher features and width-projected student features.
ag::Var rep_distill_loss(const ag::Var& teacher_features, const ag::Var& student_features,
                         const DimMap& map);

// Frozen teacher plus the learnable alignment maps for one pretraining run.
struct DistillSetup {
    VitEncoder teacher;
    DistillConfig cfg;
    HeadMap head_map;  // attention targets
    DimMap dim_map;    // representation targets

    static DistillSetup create(VitEncoder teacher, const DistillConfig& cfg,
                               const ModelConfig& student_cfg, std::uint64_t seed);

    // Alignment-map parameters for the optimizer (never the teacher's).
    std::vector<NamedParam> map_params() const;
};

// One AdamW step on recon + lambda * distill.  The teacher sees the same
// visible tokens as the student and receives no gradient.  With lambda == 0
// (or distillation disabled) this reduces exactly to pretrain_step.
StepStats distilled_pretrain_step(const VitEncoder& student, const MaeDecoder& decoder,
                                  const DistillSetup& setup, AdamW& opt, const Mat& patches,
                                  int batch, double mask_ratio, bool normalize_targets,
                                  double lr, Rng& rng);

}  // namespace mimlite
