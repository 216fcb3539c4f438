#include "mimlite/distill.hpp"

namespace mimlite {

void DistillConfig::validate(const ModelConfig& teacher, const ModelConfig& student) const {
    require(lambda >= 0.0, "distill: lambda must be non-negative");
    require(teacher.patch_size == student.patch_size,
            "distill: teacher and student must share the patch size");
    require(teacher.image_size == student.image_size,
            "distill: teacher and student must share the image size");
    if (target_kind == DistillTarget::attention) {
        require(teacher_layer == -1 || (teacher_layer >= 1 && teacher_layer <= teacher.depth),
                "distill: teacher attention layer out of range");
        require(student_layer == -1 || (student_layer >= 1 && student_layer <= student.depth),
                "distill: student attention layer out of range");
    } else {
        require(teacher_layer == -1 || (teacher_layer >= 0 && teacher_layer <= teacher.depth),
                "distill: teacher feature index out of range");
        require(student_layer == -1 || (student_layer >= 0 && student_layer <= student.depth),
                "distill: student feature index out of range");
    }
    require(attach_layer == -1 || (attach_layer >= 1 && attach_layer <= student.depth),
            "distill: attach layer out of range");
}

int DistillConfig::resolved_teacher_layer(const ModelConfig& teacher) const {
    return teacher_layer == -1 ? teacher.depth : teacher_layer;
}

int DistillConfig::resolved_student_layer(const ModelConfig& student) const {
    return student_layer == -1 ? student.depth : student_layer;
}

int DistillConfig::resolved_attach_layer(const ModelConfig& student) const {
    return attach_layer == -1 ? student.depth : attach_layer;
}

HeadMap make_head_map(int teacher_heads, int student_heads) {
    require(teacher_heads > 0 && student_heads > 0, "distill: head counts must be positive");
    Mat w = Mat::Constant(teacher_heads, student_heads, 1.0 / student_heads);
    return {ag::param(std::move(w))};
}

DimMap make_dim_map(int student_dim, int teacher_dim, Rng& rng) {
    require(teacher_dim > 0 && student_dim > 0, "distill: widths must be positive");
    return {ag::param(rng.trunc_normal_matrix(student_dim, teacher_dim, 0.0, 0.02))};
}

ag::Var attn_distill_loss(const AttentionRecord& teacher, const AttentionRecord& student,
                          const HeadMap& map, bool use_probabilities) {
    const ag::Var& t = use_probabilities ? teacher.probs : teacher.scores;
    const ag::Var& s = use_probabilities ? student.probs : student.scores;
    require(t != nullptr && s != nullptr, "distill: attention was not captured");
    require(t->value.cols() == s->value.cols(),
            "distill: teacher and student attend over different token counts");
    require(teacher.heads > 0 && student.heads > 0, "distill: head counts missing");
    require(t->value.rows() % teacher.heads == 0 && s->value.rows() % student.heads == 0,
            "distill: stack layout mismatch");
    const int rows = static_cast<int>(s->value.rows()) / student.heads;
    require(static_cast<int>(t->value.rows()) / teacher.heads == rows,
            "distill: teacher and student query counts differ");
    require(map.weights->value.rows() == teacher.heads &&
                map.weights->value.cols() == student.heads,
            "distill: head map shape mismatch");
    ag::Var mixed = ag::head_mix(s, map.weights, rows);
    return ag::mse(mixed, t);
}

ag::Var rep_distill_loss(const ag::Var& teacher_features, const ag::Var& student_features,
                         const DimMap& map) {
    require(teacher_features != nullptr && student_features != nullptr,
            "distill: features were not captured");
    require(teacher_features->value.rows() == student_features->value.rows(),
            "distill: teacher and student token counts differ");
    require(map.weights->value.rows() == student_features->value.cols() &&
                map.weights->value.cols() == teacher_features->value.cols(),
            "distill: width map shape mismatch");
    return ag::mse(ag::matmul(student_features, map.weights), teacher_features);
}

DistillSetup DistillSetup::create(VitEncoder teacher, const DistillConfig& cfg,
                                  const ModelConfig& student_cfg, std::uint64_t seed) {
    cfg.validate(teacher.cfg, student_cfg);
    DistillSetup setup;
    setup.cfg = cfg;
    setup.teacher = std::move(teacher);
    if (cfg.target_kind == DistillTarget::attention) {
        setup.head_map = make_head_map(setup.teacher.cfg.num_heads, student_cfg.num_heads);
    } else {
        // Derived stream: enabling distillation must not disturb any other
        // initialisation drawn from the run seed.
        Rng rng = Rng(seed).derive("distill.dim_map");
        setup.dim_map =
            make_dim_map(student_cfg.embed_dim, setup.teacher.cfg.embed_dim, rng);
    }
    return setup;
}

std::vector<NamedParam> DistillSetup::map_params() const {
    std::vector<NamedParam> out;
    if (head_map.weights)
        out.push_back({"distill.head_map", head_map.weights, /*decay=*/false, 1.0});
    if (dim_map.weights)
        out.push_back({"distill.dim_map", dim_map.weights, /*decay=*/false, 1.0});
    return out;
}

StepStats distilled_pretrain_step(const VitEncoder& student, const MaeDecoder& decoder,
                                  const DistillSetup& setup, AdamW& opt, const Mat& patches,
                                  int batch, double mask_ratio, bool normalize_targets,
                                  double lr, Rng& rng) {
    if (!setup.cfg.enabled || setup.cfg.lambda == 0.0)
        return pretrain_step(student, decoder, opt, patches, batch, mask_ratio,
                             normalize_targets, lr, rng);

    const DistillConfig& cfg = setup.cfg;
    const bool attn = cfg.target_kind == DistillTarget::attention;
    const int l = student.cfg.tokens_per_image();
    std::vector<MaskPlan> plans = random_mask_batch(batch, l, mask_ratio, rng);
    ReconTargets targets = reconstruction_targets(patches, normalize_targets);

    CaptureRequest capture;
    capture.attention = attn;
    capture.features = !attn;
    EncoderOutput student_out = student.forward(patches, batch, &plans, capture,
                                                cfg.resolved_attach_layer(student.cfg));

    EncoderOutput teacher_out;
    {
        ag::NoGradGuard frozen;
        teacher_out = setup.teacher.forward(patches, batch, &plans, capture);
    }

    ag::Var pred = decoder.forward(student_out.attach_tokens, batch, plans);
    ag::Var recon = mae_loss(pred, targets, plans, batch);

    ag::Var dloss;
    if (attn) {
        const int tl = cfg.resolved_teacher_layer(setup.teacher.cfg);
        const int sl = cfg.resolved_student_layer(student.cfg);
        dloss = attn_distill_loss(teacher_out.attention[static_cast<std::size_t>(tl - 1)],
                                  student_out.attention[static_cast<std::size_t>(sl - 1)],
                                  setup.head_map, cfg.use_probabilities);
    } else {
        const int tl = cfg.resolved_teacher_layer(setup.teacher.cfg);
        const int sl = cfg.resolved_student_layer(student.cfg);
        dloss = rep_distill_loss(teacher_out.features[static_cast<std::size_t>(tl)].tokens,
                                 student_out.features[static_cast<std::size_t>(sl)].tokens,
                                 setup.dim_map);
    }

    ag::Var total = ag::add(recon, ag::scale(dloss, cfg.lambda));
    opt.zero_grad();
    ag::backward(total);
    opt.step(lr);

    StepStats stats;
    stats.recon = ag::item(recon);
    stats.distill = ag::item(dloss);
    stats.total = ag::item(total);
    return stats;
}

}  // namespace mimlite
