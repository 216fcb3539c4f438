// Acceptance suite, part 1: fast property checks.  Every criterion prints one
// summary line ("[acceptance] criterion N PASS/FAIL: ...") so the suite doubles
// as a release checklist; tolerances are pinned next to each check.
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mimlite/analysis.hpp"
#include "mimlite/distill.hpp"
#include "mimlite/pipeline.hpp"
#include "mimlite/rng.hpp"
#include "../test_support.hpp"

using namespace mimlite;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool report(int criterion, const std::string& what, bool ok, double elapsed_s) {
    std::printf("[acceptance] criterion %d %s: %s (%.1fs)\n", criterion,
                ok ? "PASS" : "FAIL", what.c_str(), elapsed_s);
    std::fflush(stdout);
    return ok;
}

// Unbiased HSIC written as the quadruple-loop U-statistic over all index
// quadruples with distinct entries; shares no code with the library version.
double hsic_quadruple_loop(const Mat& k, const Mat& l) {
    const int n = static_cast<int>(k.rows());
    double s = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            for (int q = 0; q < n; ++q) {
                if (q == i || q == j) continue;
                for (int r = 0; r < n; ++r) {
                    if (r == i || r == j || r == q) continue;
                    s += k(i, j) * (l(i, j) + l(q, r) - 2.0 * l(i, q));
                }
            }
        }
    return s / (static_cast<double>(n) * (n - 1) * (n - 2) * (n - 3));
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("criterion 1: centered-kernel-alignment correctness") {
    const auto t0 = Clock::now();
    Rng rng(101);
    bool ok = true;

    // Self-similarity is exactly one up to floating-point roundoff.
    const Mat x = rng.normal_matrix(64, 16, 0.0, 1.0);
    const double self_dev = std::abs(cka(x, x) - 1.0);
    CHECK(self_dev <= 1e-6);
    ok = ok && self_dev <= 1e-6;

    // Invariance under a right-orthogonal transform and positive isotropic
    // scaling of one side.
    const Mat y = rng.normal_matrix(64, 16, 0.0, 1.0) + 0.5 * x;
    const double base = cka(x, y);
    Eigen::HouseholderQR<Mat> qr(rng.normal_matrix(16, 16, 0.0, 1.0));
    const Mat q = qr.householderQ();
    const double orth_dev = std::abs(cka(x * q, y) - base);
    const double scale_dev = std::abs(cka(3.7 * x, y) - base);
    CHECK(orth_dev <= 1e-5);
    CHECK(scale_dev <= 1e-5);
    ok = ok && orth_dev <= 1e-5 && scale_dev <= 1e-5;

    // The unbiased estimator agrees with the quadruple-loop U-statistic.
    double worst_hsic = 0.0;
    for (int n : {4, 5, 8, 12}) {
        const Mat a = rng.normal_matrix(n, 3, 0.0, 1.0);
        const Mat b = rng.normal_matrix(n, 4, 0.0, 1.0) + 0.3 * a * rng.normal_matrix(3, 4, 0.0, 1.0);
        const Mat k = linear_gram(a), l = linear_gram(b);
        worst_hsic = std::max(
            worst_hsic, std::abs(hsic_unbiased(k, l) - hsic_quadruple_loop(k, l)));
    }
    CHECK(worst_hsic <= 1e-10);
    ok = ok && worst_hsic <= 1e-10;

    // Independent Gaussian features score near zero at n = 512.
    const Mat a = rng.normal_matrix(512, 32, 0.0, 1.0);
    const Mat b = rng.normal_matrix(512, 32, 0.0, 1.0);
    const double indep = cka(a, b);
    CHECK(indep <= 0.05);
    ok = ok && indep <= 0.05;

    const double dt = seconds_since(t0);
    ok = ok && dt < 60.0;
    CHECK(report(1, "CKA self=1, orthogonal/scale invariance, quadruple-loop HSIC, "
                    "independent-Gaussian bound", ok, dt));
}

TEST_CASE("criterion 2: attention distance and entropy metrics") {
    const auto t0 = Clock::now();
    Rng rng(202);
    bool ok = true;

    // Identity attention: every query looks at its own position.
    const TokenGrid g44{4, 4};
    const Mat eye = Mat::Identity(16, 16);
    const double d_ident = attention_distance(eye, g44);
    const double e_onehot = attention_entropy(eye);
    CHECK(d_ident <= 1e-12);
    CHECK(e_onehot <= 1e-12);
    ok = ok && d_ident <= 1e-12 && e_onehot <= 1e-12;

    // Uniform attention on a 2x2 grid: mean distance from any corner is
    // (0 + 1 + 1 + sqrt(2)) / 4.
    const TokenGrid g22{2, 2};
    const Mat uni4 = Mat::Constant(4, 4, 0.25);
    const double d_uni_dev =
        std::abs(attention_distance(uni4, g22) - (2.0 + std::sqrt(2.0)) / 4.0);
    CHECK(d_uni_dev <= 1e-9);
    ok = ok && d_uni_dev <= 1e-9;

    // Uniform rows maximise entropy at ln(l).
    const Mat uni9 = Mat::Constant(9, 9, 1.0 / 9.0);
    const double e_uni_dev = std::abs(attention_entropy(uni9) - std::log(9.0));
    CHECK(e_uni_dev <= 1e-9);
    ok = ok && e_uni_dev <= 1e-9;

    // Bounds over random stochastic matrices: entropy <= ln(l), distance <=
    // grid diagonal.
    const double diag = 3.0 * std::sqrt(2.0);  // 4x4 grid corner to corner
    const double max_e = std::log(16.0);
    bool bounds_ok = true;
    for (int t = 0; t < 1000; ++t) {
        Mat p(16, 16);
        for (int i = 0; i < p.rows(); ++i) {
            double row_sum = 0.0;
            for (int j = 0; j < p.cols(); ++j) {
                p(i, j) = -std::log(rng.uniform());
                row_sum += p(i, j);
            }
            p.row(i) /= row_sum;
        }
        bounds_ok = bounds_ok && attention_distance(p, g44) <= diag + 1e-12 &&
                    attention_entropy(p) <= max_e + 1e-12;
    }
    CHECK(bounds_ok);
    ok = ok && bounds_ok;

    const double dt = seconds_since(t0);
    ok = ok && dt < 60.0;
    CHECK(report(2, "attention distance/entropy closed forms and bounds on 1000 "
                    "random stochastic matrices", ok, dt));
}

TEST_CASE("criterion 3: loss gradients match central finite differences") {
    const auto t0 = Clock::now();
    Rng rng(303);
    const double tol = 1e-4;
    bool ok = true;

    // Masked-reconstruction loss w.r.t. the prediction matrix.
    {
        const ReconTargets targets =
            reconstruction_targets(rng.normal_matrix(8, 12, 0.0, 1.0), true);
        const auto plans = random_mask_batch(2, 4, 0.5, rng);
        ag::Var pred = ag::param(rng.normal_matrix(8, 12, 0.0, 1.0));
        const double err = testsupport::fd_check(
            {pred}, [&] { return mae_loss(pred, targets, plans, 2); });
        CHECK(err <= tol);
        ok = ok && err <= tol;
    }

    // Attention-map loss w.r.t. the student stack and the head mixer, on both
    // the score and the probability paths.
    {
        AttentionRecord teacher;
        teacher.layer = 1;
        teacher.heads = 3;
        teacher.scores = ag::constant(rng.normal_matrix(12, 4, 0.0, 1.0));
        teacher.probs = ag::constant(rng.normal_matrix(12, 4, 0.0, 1.0));
        AttentionRecord student;
        student.layer = 1;
        student.heads = 2;
        student.scores = ag::param(rng.normal_matrix(8, 4, 0.0, 1.0));
        student.probs = ag::param(rng.normal_matrix(8, 4, 0.0, 1.0));
        HeadMap map = make_head_map(3, 2);

        const double err_scores = testsupport::fd_check(
            {student.scores, map.weights},
            [&] { return attn_distill_loss(teacher, student, map, false); });
        const double err_probs = testsupport::fd_check(
            {student.probs, map.weights},
            [&] { return attn_distill_loss(teacher, student, map, true); });
        CHECK(err_scores <= tol);
        CHECK(err_probs <= tol);
        ok = ok && err_scores <= tol && err_probs <= tol;
    }

    // Feature loss w.r.t. the student features and the width projection.
    {
        const ag::Var teacher = ag::constant(rng.normal_matrix(6, 9, 0.0, 1.0));
        ag::Var student = ag::param(rng.normal_matrix(6, 5, 0.0, 1.0));
        DimMap map = make_dim_map(5, 9, rng);
        const double err = testsupport::fd_check(
            {student, map.weights},
            [&] { return rep_distill_loss(teacher, student, map); });
        CHECK(err <= tol);
        ok = ok && err <= tol;
    }

    const double dt = seconds_since(t0);
    ok = ok && dt < 60.0;
    CHECK(report(3, "reconstruction/attention/feature loss gradients vs central "
                    "finite differences (rel 1e-4)", ok, dt));
}

TEST_CASE("criterion 4: decoupled attach point isolates reconstruction gradients") {
    const auto t0 = Clock::now();
    bool ok = true;

    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.depth = 12;
    cfg.embed_dim = 32;
    cfg.num_heads = 4;
    cfg.mlp_ratio = 2.0;
    cfg.num_classes = 0;
    const VitEncoder enc = VitEncoder::build(cfg, 5);
    const MaeDecoder dec = MaeDecoder::build(light_decoder_config(), cfg, 5);

    Rng rng(404);
    const int batch = 2;
    const Mat patches = rng.normal_matrix(batch * 16, cfg.patch_dim(), 0.0, 1.0);
    const auto plans = random_mask_batch(batch, 16, 0.5, rng);
    const ReconTargets targets = reconstruction_targets(patches, true);

    CaptureRequest capture;
    capture.attention = true;
    const int attach = 8;
    const EncoderOutput out = enc.forward(patches, batch, &plans, capture, attach);

    std::vector<ag::Var> all_vars;
    for (const NamedParam& p : enc.named_params()) all_vars.push_back(p.var);
    for (const NamedParam& p : dec.named_params()) all_vars.push_back(p.var);

    // Reconstruction gradients: zero (exactly) past the attach layer.
    ag::zero_grad(all_vars);
    ag::backward(mae_loss(dec.forward(out.attach_tokens, batch, plans), targets,
                          plans, batch));
    double deep_grad = 0.0, shallow_grad = 0.0;
    for (const NamedParam& p : enc.named_params()) {
        for (int b = attach + 1; b <= cfg.depth; ++b) {
            if (p.name.rfind("blocks." + std::to_string(b) + ".", 0) == 0) {
                deep_grad = std::max(deep_grad, p.var->grad.cwiseAbs().maxCoeff());
            }
        }
        for (int b = 1; b <= attach; ++b) {
            if (p.name.rfind("blocks." + std::to_string(b) + ".", 0) == 0) {
                shallow_grad = std::max(shallow_grad, p.var->grad.cwiseAbs().maxCoeff());
            }
        }
    }
    CHECK(deep_grad == 0.0);
    CHECK(shallow_grad > 0.0);
    ok = ok && deep_grad == 0.0 && shallow_grad > 0.0;

    // Distillation at the final block still reaches block-12 parameters.
    ModelConfig tcfg = cfg;
    tcfg.embed_dim = 64;
    tcfg.num_heads = 8;
    const VitEncoder teacher = VitEncoder::build(tcfg, 77);
    EncoderOutput tout;
    {
        ag::NoGradGuard guard;
        tout = teacher.forward(patches, batch, &plans, capture);
    }
    HeadMap map = make_head_map(tcfg.num_heads, cfg.num_heads);
    ag::zero_grad(all_vars);
    ag::backward(attn_distill_loss(tout.attention.back(), out.attention.back(),
                                   map, false));
    double block12_grad = 0.0;
    for (const NamedParam& p : enc.named_params()) {
        if (p.name.rfind("blocks.12.", 0) == 0) {
            block12_grad = std::max(block12_grad, p.var->grad.cwiseAbs().maxCoeff());
        }
    }
    CHECK(block12_grad > 0.0);
    ok = ok && block12_grad > 0.0;

    const double dt = seconds_since(t0);
    ok = ok && dt < 60.0;
    CHECK(report(4, "attach at block 8 of 12: zero reconstruction gradients for "
                    "blocks 9-12, live distillation gradient at block 12", ok, dt));
}

TEST_CASE("criterion 5: frozen teacher and zero-weight distillation equivalence") {
    const auto t0 = Clock::now();
    bool ok = true;

    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.depth = 2;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2.0;
    cfg.num_classes = 0;
    ModelConfig tcfg = cfg;
    tcfg.embed_dim = 32;
    tcfg.num_heads = 4;

    const int batch = 4;
    Rng data_rng(11);
    const Mat patches = data_rng.normal_matrix(batch * 4, cfg.patch_dim(), 0.0, 1.0);

    // (a) Ten distilled steps leave the teacher weights bitwise unchanged.
    {
        DistillConfig dc;
        dc.enabled = true;
        dc.lambda = 0.5;
        DistillSetup setup = DistillSetup::create(VitEncoder::build(tcfg, 21), dc, cfg, 22);
        const std::uint64_t teacher_digest = setup.teacher.weights_digest();

        VitEncoder student = VitEncoder::build(cfg, 23);
        MaeDecoder decoder = MaeDecoder::build(light_decoder_config(), cfg, 23);
        auto params = student.named_params();
        auto dparams = decoder.named_params();
        auto mparams = setup.map_params();
        params.insert(params.end(), dparams.begin(), dparams.end());
        params.insert(params.end(), mparams.begin(), mparams.end());
        AdamW opt(params, 0.9, 0.95, 1e-8, 0.05);

        Rng rng(31);
        bool frozen = true, distill_live = false;
        for (int step = 0; step < 10; ++step) {
            const StepStats stats = distilled_pretrain_step(
                student, decoder, setup, opt, patches, batch, 0.5, true, 1e-3, rng);
            frozen = frozen && setup.teacher.weights_digest() == teacher_digest;
            distill_live = distill_live || stats.distill > 0.0;
        }
        CHECK(frozen);
        CHECK(distill_live);
        ok = ok && frozen && distill_live;
    }

    // (b) lambda = 0 reproduces the plain masked-autoencoder trajectory bitwise.
    {
        VitEncoder enc_a = VitEncoder::build(cfg, 41);
        MaeDecoder dec_a = MaeDecoder::build(light_decoder_config(), cfg, 41);
        auto params_a = enc_a.named_params();
        auto dparams_a = dec_a.named_params();
        params_a.insert(params_a.end(), dparams_a.begin(), dparams_a.end());
        AdamW opt_a(params_a, 0.9, 0.95, 1e-8, 0.05);

        DistillConfig dc;
        dc.enabled = true;
        dc.lambda = 0.0;
        DistillSetup setup = DistillSetup::create(VitEncoder::build(tcfg, 21), dc, cfg, 22);
        VitEncoder enc_b = VitEncoder::build(cfg, 41);
        MaeDecoder dec_b = MaeDecoder::build(light_decoder_config(), cfg, 41);
        auto params_b = enc_b.named_params();
        auto dparams_b = dec_b.named_params();
        auto mparams_b = setup.map_params();
        params_b.insert(params_b.end(), dparams_b.begin(), dparams_b.end());
        params_b.insert(params_b.end(), mparams_b.begin(), mparams_b.end());
        AdamW opt_b(params_b, 0.9, 0.95, 1e-8, 0.05);

        Rng rng_a(51), rng_b(51);
        bool identical = true;
        for (int step = 0; step < 10; ++step) {
            const StepStats sa =
                pretrain_step(enc_a, dec_a, opt_a, patches, batch, 0.5, true, 1e-3, rng_a);
            const StepStats sb = distilled_pretrain_step(
                enc_b, dec_b, setup, opt_b, patches, batch, 0.5, true, 1e-3, rng_b);
            identical = identical && sa.total == sb.total &&
                        enc_a.weights_digest() == enc_b.weights_digest() &&
                        dec_a.weights_digest() == dec_b.weights_digest();
        }
        CHECK(identical);
        ok = ok && identical;
    }

    const double dt = seconds_since(t0);
    CHECK(report(5, "teacher digest bitwise constant over 10 distilled steps; "
                    "lambda=0 trajectory bitwise equals plain pretraining", ok, dt));
}

TEST_CASE("criterion 6: masking invariants") {
    const auto t0 = Clock::now();
    Rng rng(606);
    bool ok = true;

    bool partition_ok = true;
    for (int t = 0; t < 1000; ++t) {
        const int total = 1 + static_cast<int>(rng.uniform_index(300));
        const double ratio = rng.uniform(0.005, 0.995);
        const MaskPlan plan = random_mask(total, ratio, rng);

        const int expect_visible = std::max(
            1, static_cast<int>(std::floor(static_cast<double>(total) * (1.0 - ratio))));
        bool good = static_cast<int>(plan.visible.size()) == expect_visible &&
                    static_cast<int>(plan.visible.size() + plan.masked.size()) == total;
        std::vector<char> seen(static_cast<std::size_t>(total), 0);
        for (const auto* list : {&plan.visible, &plan.masked}) {
            for (std::size_t i = 0; i < list->size(); ++i) {
                const int v = (*list)[i];
                good = good && v >= 0 && v < total && !seen[static_cast<std::size_t>(v)];
                if (v >= 0 && v < total) seen[static_cast<std::size_t>(v)] = 1;
                if (i > 0) good = good && (*list)[i - 1] < v;  // strictly ascending
            }
        }
        partition_ok = partition_ok && good;
    }
    CHECK(partition_ok);
    ok = ok && partition_ok;

    const MaskPlan plan196 = random_mask(196, 0.75, rng);
    CHECK(plan196.visible.size() == 49);
    CHECK(plan196.masked.size() == 147);
    ok = ok && plan196.visible.size() == 49 && plan196.masked.size() == 147;

    const double dt = seconds_since(t0);
    CHECK(report(6, "visible/masked partition over 1000 random draws; 196 tokens "
                    "at ratio 0.75 keep exactly 49", ok, dt));
}

TEST_CASE("criterion 10: identical config and seed reproduce metric files") {
    const auto t0 = Clock::now();

    const std::string ini = R"(
[data]
kind = builtin_small
image_size = 16
num_classes = 6
total = 48
train_fraction = 0.75
seed = 9

[model]
image_size = 16
patch_size = 4
depth = 2
embed_dim = 32
num_heads = 4
mlp_ratio = 2
num_classes = 0

[pretrain]
epochs = 2
batch_size = 18
base_lr = 1e-3
warmup_epochs = 1
seed = 3

[finetune]
epochs = 2
batch_size = 18
base_lr = 2e-3
warmup_epochs = 1
seed = 3

[probe]
epochs = 5
batch_size = 18
seed = 3

[analyze]
mode = attention
batch_size = 8
max_batches = 1
seed = 3
)";
    const Config cfg = Config::parse_string(ini, "acceptance");
    const fs::path base = fs::temp_directory_path() / "mimlite_acceptance_repro";
    fs::remove_all(base);
    run_experiment(cfg, (base / "a").string());
    run_experiment(cfg, (base / "b").string());

    bool ok = true;
    for (const char* rel :
         {"pretrain/losses.csv", "finetune/metrics.csv", "probe/metrics.csv",
          "analyze/attention_distance.csv", "analyze/attention_entropy.csv"}) {
        const bool same = read_file(base / "a" / rel) == read_file(base / "b" / rel);
        CHECK_MESSAGE(same, rel);
        ok = ok && same;
    }

    const double dt = seconds_since(t0);
    CHECK(report(10, "two runs of one config+seed produce byte-identical metric "
                     "CSVs across all stages", ok, dt));
}
