#include "mimlite/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mimlite {

namespace fs = std::filesystem;
using nlohmann::json;

// --- settings validation --------------------------------------------------------

void PretrainSettings::validate() const {
    require(epochs >= 0, "pretrain: epochs must be >= 0");
    require(batch_size >= 1, "pretrain: batch_size must be >= 1");
    require(base_lr > 0.0, "pretrain: base_lr must be positive");
    require(min_lr >= 0.0, "pretrain: min_lr must be >= 0");
    require(weight_decay >= 0.0, "pretrain: weight_decay must be >= 0");
    require(warmup_epochs >= 0, "pretrain: warmup_epochs must be >= 0");
    require(mask_ratio > 0.0 && mask_ratio < 1.0, "pretrain: mask_ratio must be in (0, 1)");
}

void AnalyzeSettings::validate() const {
    require(mode == "cka" || mode == "attention" || mode == "reserve",
            "analyze: mode must be cka, attention, or reserve");
    require(batch_size >= 1, "analyze: batch_size must be >= 1");
    require(max_batches >= 0, "analyze: max_batches must be >= 0");
    require(keep_blocks >= 0, "analyze: keep_blocks must be >= 0");
    if (mode == "reserve") {
        require(keep_blocks >= 1, "analyze: reserve mode needs keep_blocks >= 1");
    }
}

// --- config parsing ----------------------------------------------------------------

namespace {

ModelConfig parse_model(const Config& cfg) {
    cfg.require_known_keys(
        "model", {"preset", "image_size", "patch_size", "in_channels", "depth",
                  "embed_dim", "num_heads", "mlp_ratio", "num_classes"});
    ModelConfig m;
    const std::string preset = cfg.get_string("model", "preset", "");
    if (preset == "tiny") {
        m = tiny_config(0);
    } else if (!preset.empty()) {
        throw InputError("config: [model] unknown preset '" + preset + "' (expected tiny)");
    }
    m.image_size = cfg.get_int("model", "image_size", m.image_size);
    m.patch_size = cfg.get_int("model", "patch_size", m.patch_size);
    m.in_channels = cfg.get_int("model", "in_channels", m.in_channels);
    m.depth = cfg.get_int("model", "depth", m.depth);
    m.embed_dim = cfg.get_int("model", "embed_dim", m.embed_dim);
    m.num_heads = cfg.get_int("model", "num_heads", m.num_heads);
    m.mlp_ratio = cfg.get_double("model", "mlp_ratio", m.mlp_ratio);
    m.num_classes = cfg.get_int("model", "num_classes", m.num_classes);
    m.validate();
    return m;
}

DecoderConfig parse_decoder(const Config& cfg) {
    cfg.require_known_keys("decoder", {"depth", "embed_dim", "num_heads", "mlp_ratio"});
    DecoderConfig d = light_decoder_config();
    d.depth = cfg.get_int("decoder", "depth", d.depth);
    d.embed_dim = cfg.get_int("decoder", "embed_dim", d.embed_dim);
    d.num_heads = cfg.get_int("decoder", "num_heads", d.num_heads);
    d.mlp_ratio = cfg.get_double("decoder", "mlp_ratio", d.mlp_ratio);
    d.validate();
    return d;
}

PretrainSettings parse_pretrain(const Config& cfg) {
    cfg.require_known_keys(
        "pretrain", {"epochs", "batch_size", "base_lr", "min_lr", "weight_decay", "beta1",
                     "beta2", "warmup_epochs", "mask_ratio", "normalize_targets", "seed"});
    PretrainSettings p;
    p.epochs = cfg.get_int("pretrain", "epochs", p.epochs);
    p.batch_size = cfg.get_int("pretrain", "batch_size", p.batch_size);
    p.base_lr = cfg.get_double("pretrain", "base_lr", p.base_lr);
    p.min_lr = cfg.get_double("pretrain", "min_lr", p.min_lr);
    p.weight_decay = cfg.get_double("pretrain", "weight_decay", p.weight_decay);
    p.beta1 = cfg.get_double("pretrain", "beta1", p.beta1);
    p.beta2 = cfg.get_double("pretrain", "beta2", p.beta2);
    p.warmup_epochs = cfg.get_int("pretrain", "warmup_epochs", p.warmup_epochs);
    p.mask_ratio = cfg.get_double("pretrain", "mask_ratio", p.mask_ratio);
    p.normalize_targets = cfg.get_bool("pretrain", "normalize_targets", p.normalize_targets);
    p.seed = cfg.get_u64("pretrain", "seed", p.seed);
    p.validate();
    return p;
}

DistillConfig parse_distill(const Config& cfg) {
    cfg.require_known_keys(
        "distill", {"enabled", "target", "teacher_layer", "student_layer", "attach_layer",
                    "lambda", "use_probabilities", "teacher_checkpoint"});
    DistillConfig d;
    d.enabled = cfg.get_bool("distill", "enabled", d.enabled);
    const std::string target = cfg.get_string("distill", "target", "attention");
    if (target == "attention") {
        d.target_kind = DistillTarget::attention;
    } else if (target == "representation") {
        d.target_kind = DistillTarget::representation;
    } else {
        throw InputError("config: [distill] target must be attention or representation");
    }
    d.teacher_layer = cfg.get_int("distill", "teacher_layer", d.teacher_layer);
    d.student_layer = cfg.get_int("distill", "student_layer", d.student_layer);
    d.attach_layer = cfg.get_int("distill", "attach_layer", d.attach_layer);
    d.lambda = cfg.get_double("distill", "lambda", d.lambda);
    d.use_probabilities = cfg.get_bool("distill", "use_probabilities", d.use_probabilities);
    d.teacher_checkpoint = cfg.get_string("distill", "teacher_checkpoint", "");
    return d;
}

Recipe parse_recipe(const Config& cfg, const std::string& section, Recipe r,
                    const std::set<std::string>& extra_keys) {
    std::set<std::string> allowed{"optimizer",       "base_lr",        "min_lr",
                                  "weight_decay",    "beta1",          "beta2",
                                  "momentum",        "epochs",         "warmup_epochs",
                                  "batch_size",      "layerwise_decay", "label_smoothing",
                                  "random_crop",     "hflip",          "color_jitter",
                                  "mixup_alpha",     "seed"};
    allowed.insert(extra_keys.begin(), extra_keys.end());
    cfg.require_known_keys(section, allowed);

    const std::string opt = cfg.get_string(section, "optimizer", "adamw");
    if (opt == "adamw") {
        r.optimizer = OptimizerKind::adamw;
    } else if (opt == "sgd") {
        r.optimizer = OptimizerKind::sgd;
    } else {
        throw InputError("config: [" + section + "] optimizer must be adamw or sgd");
    }
    r.base_lr = cfg.get_double(section, "base_lr", r.base_lr);
    r.min_lr = cfg.get_double(section, "min_lr", r.min_lr);
    r.weight_decay = cfg.get_double(section, "weight_decay", r.weight_decay);
    r.beta1 = cfg.get_double(section, "beta1", r.beta1);
    r.beta2 = cfg.get_double(section, "beta2", r.beta2);
    r.momentum = cfg.get_double(section, "momentum", r.momentum);
    r.epochs = cfg.get_int(section, "epochs", r.epochs);
    r.warmup_epochs = cfg.get_int(section, "warmup_epochs", r.warmup_epochs);
    r.batch_size = cfg.get_int(section, "batch_size", r.batch_size);
    r.layerwise_decay = cfg.get_double(section, "layerwise_decay", r.layerwise_decay);
    r.label_smoothing = cfg.get_double(section, "label_smoothing", r.label_smoothing);
    r.aug.random_crop = cfg.get_bool(section, "random_crop", r.aug.random_crop);
    r.aug.hflip = cfg.get_bool(section, "hflip", r.aug.hflip);
    r.aug.color_jitter = cfg.get_double(section, "color_jitter", r.aug.color_jitter);
    r.aug.mixup_alpha = cfg.get_double(section, "mixup_alpha", r.aug.mixup_alpha);
    r.seed = cfg.get_u64(section, "seed", r.seed);
    r.validate();
    return r;
}

AnalyzeSettings parse_analyze(const Config& cfg) {
    cfg.require_known_keys(
        "analyze", {"mode", "checkpoint", "checkpoint_b", "batch_size", "max_batches",
                    "per_token", "keep_blocks", "seed"});
    AnalyzeSettings a;
    a.mode = cfg.get_string("analyze", "mode", a.mode);
    a.checkpoint = cfg.get_string("analyze", "checkpoint", "");
    a.checkpoint_b = cfg.get_string("analyze", "checkpoint_b", "");
    a.batch_size = cfg.get_int("analyze", "batch_size", a.batch_size);
    a.max_batches = cfg.get_int("analyze", "max_batches", a.max_batches);
    a.per_token = cfg.get_bool("analyze", "per_token", a.per_token);
    a.keep_blocks = cfg.get_int("analyze", "keep_blocks", a.keep_blocks);
    a.seed = cfg.get_u64("analyze", "seed", a.seed);
    a.validate();
    return a;
}

DatasetSpec parse_data(const Config& cfg) {
    cfg.require_known_keys("data", {"kind", "root", "image_size", "num_classes", "total",
                                    "train_fraction", "seed"});
    DatasetSpec d;
    const std::string kind = cfg.get_string("data", "kind", "builtin_small");
    if (kind == "builtin_small") {
        d.kind = DatasetKind::builtin_small;
    } else if (kind == "synthetic_blobs") {
        d.kind = DatasetKind::synthetic_blobs;
    } else if (kind == "image_directory") {
        d.kind = DatasetKind::image_directory;
    } else {
        throw InputError(
            "config: [data] kind must be builtin_small, synthetic_blobs, or image_directory");
    }
    d.root = cfg.get_string("data", "root", "");
    d.image_size = cfg.get_int("data", "image_size", d.image_size);
    d.num_classes = cfg.get_int("data", "num_classes", d.num_classes);
    d.total = cfg.get_int("data", "total", d.total);
    d.train_fraction = cfg.get_double("data", "train_fraction", d.train_fraction);
    d.seed = cfg.get_u64("data", "seed", d.seed);
    d.validate();
    return d;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& cfg) {
    static const std::set<std::string> known{"model",    "decoder", "pretrain", "distill",
                                             "finetune", "probe",   "analyze",  "data"};
    for (const std::string& name : cfg.section_names()) {
        if (!known.count(name) && name.rfind("sweep.", 0) != 0) {
            throw InputError("config: unknown section [" + name + "]");
        }
    }

    ExperimentConfig out;
    out.model = parse_model(cfg);
    out.decoder = parse_decoder(cfg);
    out.pretrain = parse_pretrain(cfg);
    out.distill = parse_distill(cfg);

    Recipe ft;
    ft.epochs = 50;
    ft.warmup_epochs = 5;
    ft.batch_size = 64;
    ft.base_lr = 1e-3;
    out.finetune_recipe = parse_recipe(cfg, "finetune", ft, {"init_checkpoint"});
    out.finetune_init = cfg.get_string("finetune", "init_checkpoint", "");

    Recipe probe;
    probe.epochs = 30;
    probe.warmup_epochs = 3;
    probe.batch_size = 64;
    probe.base_lr = 0.1;
    probe.weight_decay = 0.0;
    probe.aug.random_crop = false;
    probe.aug.hflip = false;
    out.probe_recipe = parse_recipe(cfg, "probe", probe, {"checkpoint"});
    out.probe_checkpoint = cfg.get_string("probe", "checkpoint", "");

    out.analyze = parse_analyze(cfg);
    out.data = parse_data(cfg);
    return out;
}

// --- shared stage helpers ---------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory: " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "cannot write: " + path);
    f << text;
    f.flush();
    require(f.good(), "write failed: " + path);
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    std::vector<std::string> files, json metadata) {
    std::sort(files.begin(), files.end());
    json manifest{{"command", command}, {"files", files}, {"metadata", metadata}};
    write_text((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<Image> resize_to(const std::vector<Image>& images, int size) {
    std::vector<Image> out;
    out.reserve(images.size());
    for (const Image& img : images) {
        out.push_back(img.width == size && img.height == size
                          ? img
                          : resize_bilinear(img, size, size));
    }
    return out;
}

json dataset_summary(const DatasetSpec& spec, const SplitDataset& data) {
    const char* kind = spec.kind == DatasetKind::builtin_small      ? "builtin_small"
                       : spec.kind == DatasetKind::synthetic_blobs ? "synthetic_blobs"
                                                                   : "image_directory";
    return json{{"kind", kind},
                {"train_examples", data.train.size()},
                {"eval_examples", data.eval.size()},
                {"num_classes", data.train.num_classes},
                {"skipped_files", data.skipped_files},
                {"seed", spec.seed}};
}

// Teacher encoder adapted (position table resampled) to the student's input size.
VitEncoder load_teacher(const std::string& path, int image_size) {
    const Checkpoint ckpt = load_checkpoint(path);
    ModelConfig cfg = model_config_from_json(ckpt.metadata.at("model"));
    if (cfg.image_size != image_size) {
        cfg.image_size = image_size;
        cfg.validate();
        VitEncoder teacher = VitEncoder::build(cfg, ckpt.metadata.value("seed", std::uint64_t{0}));
        load_encoder_state(teacher, ckpt);
        return teacher;
    }
    return encoder_from_checkpoint(ckpt);
}

// --- dataset cache -----------------------------------------------------------------

constexpr int kDatasetCacheVersion = 1;

// One row per image; usable only when every image shares one shape.
bool uniform_shape(const std::vector<Image>& images) {
    for (const Image& img : images) {
        if (img.width != images[0].width || img.height != images[0].height ||
            img.channels != images[0].channels) {
            return false;
        }
    }
    return true;
}

Mat pack_images(const std::vector<Image>& images) {
    Mat m(static_cast<Eigen::Index>(images.size()),
          static_cast<Eigen::Index>(images.empty() ? 0 : images[0].size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const auto& d = images[static_cast<std::size_t>(r)].data;
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = d[static_cast<std::size_t>(c)];
    }
    return m;
}

std::vector<Image> unpack_images(const Mat& m, int width, int height, int channels) {
    require(m.cols() == static_cast<Eigen::Index>(width) * height * channels,
            "dataset cache: image payload shape mismatch");
    std::vector<Image> images(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Image img(width, height, channels);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            img.data[static_cast<std::size_t>(c)] = m(r, c);
        images[static_cast<std::size_t>(r)] = std::move(img);
    }
    return images;
}

Mat pack_labels(const std::vector<int>& labels) {
    Mat m(1, static_cast<Eigen::Index>(labels.size()));
    for (Eigen::Index i = 0; i < m.cols(); ++i) m(0, i) = labels[static_cast<std::size_t>(i)];
    return m;
}

std::vector<int> unpack_labels(const Mat& m) {
    std::vector<int> labels(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i)
        labels[static_cast<std::size_t>(i)] = static_cast<int>(m(0, i));
    return labels;
}

std::uint64_t dataset_digest(const DatasetSpec& spec) {
    std::uint64_t h = kFnvOffset;
    auto mix = [&h](const void* p, std::size_t n) { h = fnv1a(p, n, h); };
    const int version = kDatasetCacheVersion;
    const int kind = static_cast<int>(spec.kind);
    mix(&version, sizeof version);
    mix(&kind, sizeof kind);
    h = fnv1a(spec.root, h);
    mix(&spec.image_size, sizeof spec.image_size);
    mix(&spec.num_classes, sizeof spec.num_classes);
    mix(&spec.total, sizeof spec.total);
    mix(&spec.train_fraction, sizeof spec.train_fraction);
    mix(&spec.seed, sizeof spec.seed);
    return h;
}

const char* labeled_names[2] = {"train", "eval"};

}  // namespace

SplitDataset ingest_dataset_cached(const DatasetSpec& spec) {
    const char* cache_env = std::getenv("MIMLITE_CACHE_DIR");
    if (cache_env == nullptr || *cache_env == '\0') return ingest_dataset(spec);
    spec.validate();

    const fs::path file =
        fs::path(cache_env) / ("dataset-" + hex64(dataset_digest(spec)) + ".ckpt");
    if (fs::exists(file)) {
        try {
            const Checkpoint ck = load_checkpoint(file.string());
            require(ck.metadata.value("kind", "") == "dataset" &&
                        ck.metadata.value("version", 0) == kDatasetCacheVersion,
                    "dataset cache: stale entry");
            SplitDataset d;
            d.skipped_files = ck.metadata.at("skipped_files").get<int>();
            d.class_names = ck.metadata.at("class_names").get<std::vector<std::string>>();
            const int width = ck.metadata.at("width").get<int>();
            const int height = ck.metadata.at("height").get<int>();
            const int channels = ck.metadata.at("channels").get<int>();
            const int num_classes = ck.metadata.at("num_classes").get<int>();
            for (LabeledData* split : {&d.train, &d.eval}) {
                const std::string prefix = labeled_names[split == &d.eval];
                const Mat* images = ck.find(prefix + ".images");
                const Mat* labels = ck.find(prefix + ".labels");
                require(images != nullptr && labels != nullptr,
                        "dataset cache: missing tensors");
                split->images = unpack_images(*images, width, height, channels);
                split->labels = unpack_labels(*labels);
                split->num_classes = num_classes;
            }
            return d;
        } catch (const std::exception&) {
            // Unreadable or stale cache entry: fall through and rebuild it.
        }
    }

    SplitDataset d = ingest_dataset(spec);
    if (!d.train.images.empty() && uniform_shape(d.train.images) &&
        uniform_shape(d.eval.images) &&
        (d.eval.images.empty() ||
         d.eval.images[0].size() == d.train.images[0].size())) {
        ensure_dir(cache_env);
        Checkpoint ck;
        ck.metadata = json{{"kind", "dataset"},
                           {"version", kDatasetCacheVersion},
                           {"width", d.train.images[0].width},
                           {"height", d.train.images[0].height},
                           {"channels", d.train.images[0].channels},
                           {"num_classes", d.train.num_classes},
                           {"skipped_files", d.skipped_files},
                           {"class_names", d.class_names}};
        ck.tensors = {{"train.images", pack_images(d.train.images)},
                      {"train.labels", pack_labels(d.train.labels)},
                      {"eval.images", pack_images(d.eval.images)},
                      {"eval.labels", pack_labels(d.eval.labels)}};
        save_checkpoint(file.string(), ck);
    }
    return d;
}

// --- pretraining -------------------------------------------------------------------

std::string run_pretrain(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.pretrain.validate();
    ensure_dir(out_dir);
    const PretrainSettings& p = cfg.pretrain;

    const SplitDataset data = ingest_dataset_cached(cfg.data);
    const std::vector<Image> train = resize_to(data.train.images, cfg.model.image_size);
    require(!train.empty(), "pretrain: empty training split");

    ModelConfig enc_cfg = cfg.model;
    enc_cfg.num_classes = 0;  // generative pretraining carries no classifier
    VitEncoder encoder = VitEncoder::build(enc_cfg, p.seed);
    MaeDecoder decoder = MaeDecoder::build(cfg.decoder, enc_cfg, p.seed);

    std::vector<NamedParam> params = encoder.named_params();
    {
        const std::vector<NamedParam> dec_params = decoder.named_params();
        params.insert(params.end(), dec_params.begin(), dec_params.end());
    }

    const bool distilling = cfg.distill.enabled;
    DistillSetup setup;
    if (distilling) {
        require(!cfg.distill.teacher_checkpoint.empty(),
                "distill: teacher_checkpoint is required when distillation is enabled");
        VitEncoder teacher = load_teacher(cfg.distill.teacher_checkpoint, enc_cfg.image_size);
        setup = DistillSetup::create(std::move(teacher), cfg.distill, enc_cfg, p.seed);
        const std::vector<NamedParam> map_params = setup.map_params();
        params.insert(params.end(), map_params.begin(), map_params.end());
    }
    AdamW opt(std::move(params), p.beta1, p.beta2, 1e-8, p.weight_decay);

    const std::size_t n = train.size();
    const long steps_per_epoch = static_cast<long>((n + p.batch_size - 1) / p.batch_size);
    const long total_steps = steps_per_epoch * p.epochs;
    const long warmup_steps = std::min<long>(steps_per_epoch * p.warmup_epochs, total_steps);
    const double peak = effective_lr(p.base_lr, p.batch_size);

    Rng order_rng = Rng(p.seed).derive("pretrain.order");
    Rng mask_rng = Rng(p.seed).derive("pretrain.masks");

    std::string losses = "step,recon_loss,distill_loss,total\n";
    std::uint64_t loss_digest = kFnvOffset;
    StepStats last{};
    long global_step = 0;
    for (int epoch = 1; epoch <= p.epochs; ++epoch) {
        const std::vector<int> order = order_rng.permutation(static_cast<int>(n));
        for (std::size_t start = 0; start < n; start += p.batch_size) {
            const std::size_t stop = std::min(n, start + p.batch_size);
            std::vector<Image> batch;
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);
            const Mat patches = patchify_batch(batch, cfg.model.patch_size, nullptr);
            const double lr = cosine_schedule(global_step, std::max<long>(total_steps, 1),
                                              warmup_steps, peak, p.min_lr);
            last = distilling
                       ? distilled_pretrain_step(encoder, decoder, setup, opt, patches,
                                                 static_cast<int>(batch.size()), p.mask_ratio,
                                                 p.normalize_targets, lr, mask_rng)
                       : pretrain_step(encoder, decoder, opt, patches,
                                       static_cast<int>(batch.size()), p.mask_ratio,
                                       p.normalize_targets, lr, mask_rng);
            losses += std::to_string(global_step) + "," + fmt(last.recon) + "," +
                      fmt(last.distill) + "," + fmt(last.total) + "\n";
            loss_digest = fnv1a(&last.total, sizeof(last.total), loss_digest);
            ++global_step;
        }
    }

    write_text((fs::path(out_dir) / "losses.csv").string(), losses);
    const json extra{{"seed", p.seed},
                     {"steps", global_step},
                     {"loss_digest", hex64(loss_digest)}};
    const std::string enc_path = (fs::path(out_dir) / "encoder.ckpt").string();
    save_checkpoint(enc_path, encoder_state(encoder, extra));
    save_checkpoint((fs::path(out_dir) / "decoder.ckpt").string(),
                    decoder_state(decoder, extra));

    write_manifest(out_dir, "pretrain", {"encoder.ckpt", "decoder.ckpt", "losses.csv"},
                   json{{"model", model_config_to_json(enc_cfg)},
                        {"decoder", decoder_config_to_json(cfg.decoder)},
                        {"dataset", dataset_summary(cfg.data, data)},
                        {"epochs", p.epochs},
                        {"steps", global_step},
                        {"mask_ratio", p.mask_ratio},
                        {"distillation", distilling},
                        {"final_recon_loss", last.recon},
                        {"final_total_loss", last.total}});
    return enc_path;
}

// --- fine-tuning ----------------------------------------------------------------------

std::string run_finetune(const ExperimentConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const SplitDataset data = ingest_dataset_cached(cfg.data);
    const int classes = data.train.num_classes;
    require(cfg.model.num_classes == 0 || cfg.model.num_classes == classes,
            "finetune: [model] num_classes disagrees with the dataset");

    VitEncoder model;
    if (cfg.finetune_init.empty()) {
        ModelConfig mc = cfg.model;
        mc.num_classes = classes;
        model = VitEncoder::build(mc, cfg.finetune_recipe.seed);
    } else {
        model = encoder_from_checkpoint(load_checkpoint(cfg.finetune_init), classes);
    }

    const TrainResult result = finetune(model, data.train, data.eval, cfg.finetune_recipe);

    std::string metrics = "epoch,lr,train_loss,eval_top1\n";
    for (const EpochLog& e : result.epochs) {
        metrics += std::to_string(e.epoch) + "," + fmt(e.lr) + "," + fmt(e.train_loss) +
                   "," + fmt(e.eval_top1) + "\n";
    }
    write_text((fs::path(out_dir) / "metrics.csv").string(), metrics);

    const std::string model_path = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(model_path,
                    encoder_state(model, json{{"seed", cfg.finetune_recipe.seed},
                                              {"final_top1", result.final_top1},
                                              {"best_top1", result.best_top1}}));
    write_manifest(out_dir, "finetune", {"model.ckpt", "metrics.csv"},
                   json{{"model", model_config_to_json(model.cfg)},
                        {"dataset", dataset_summary(cfg.data, data)},
                        {"init_checkpoint",
                         cfg.finetune_init.empty() ? "scratch" : cfg.finetune_init},
                        {"epochs", cfg.finetune_recipe.epochs},
                        {"final_top1", result.final_top1},
                        {"best_top1", result.best_top1}});
    return model_path;
}

// --- linear probe ------------------------------------------------------------------------

std::string run_probe(const ExperimentConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const SplitDataset data = ingest_dataset_cached(cfg.data);

    VitEncoder model;
    if (cfg.probe_checkpoint.empty()) {
        ModelConfig mc = cfg.model;
        mc.num_classes = 0;
        model = VitEncoder::build(mc, cfg.probe_recipe.seed);
    } else {
        model = encoder_from_checkpoint(load_checkpoint(cfg.probe_checkpoint));
    }

    const TrainResult result = linear_probe(model, data.train, data.eval, cfg.probe_recipe);

    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    write_text(metrics_path, "stage,top1\nprobe," + fmt(result.final_top1) + "\n");
    write_manifest(out_dir, "probe", {"metrics.csv"},
                   json{{"model", model_config_to_json(model.cfg)},
                        {"dataset", dataset_summary(cfg.data, data)},
                        {"checkpoint",
                         cfg.probe_checkpoint.empty() ? "fresh" : cfg.probe_checkpoint},
                        {"epochs", cfg.probe_recipe.epochs},
                        {"top1", result.final_top1}});
    return metrics_path;
}

// --- analysis -------------------------------------------------------------------------------

std::string run_analyze(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.analyze.validate();
    ensure_dir(out_dir);
    const AnalyzeSettings& a = cfg.analyze;

    VitEncoder model;
    if (a.checkpoint.empty()) {
        ModelConfig mc = cfg.model;
        mc.num_classes = 0;
        model = VitEncoder::build(mc, a.seed);
    } else {
        model = encoder_from_checkpoint(load_checkpoint(a.checkpoint));
    }

    if (a.mode == "reserve") {
        require(a.keep_blocks <= model.cfg.depth,
                "analyze: keep_blocks exceeds the model depth");
        const VitEncoder reserved =
            reserve_leading_blocks(model, model.cfg, a.keep_blocks, a.seed);
        const std::string path = (fs::path(out_dir) / "encoder.ckpt").string();
        save_checkpoint(path, encoder_state(reserved, json{{"seed", a.seed},
                                                           {"kept_blocks", a.keep_blocks}}));
        write_manifest(out_dir, "analyze", {"encoder.ckpt"},
                       json{{"mode", "reserve"},
                            {"source", a.checkpoint.empty() ? "fresh" : a.checkpoint},
                            {"keep_blocks", a.keep_blocks},
                            {"model", model_config_to_json(reserved.cfg)}});
        return path;
    }

    const SplitDataset data = ingest_dataset_cached(cfg.data);
    const std::vector<Image>& pool = data.eval.images.empty() ? data.train.images
                                                              : data.eval.images;
    const std::vector<Image> images = resize_to(pool, model.cfg.image_size);

    ReportInputs inputs;
    inputs.metadata["mode"] = a.mode;
    inputs.metadata["model_a"] = a.checkpoint.empty() ? "fresh" : a.checkpoint;
    inputs.metadata["batch_size"] = std::to_string(a.batch_size);
    inputs.metadata["max_batches"] = std::to_string(a.max_batches);

    if (a.mode == "cka") {
        VitEncoder other;
        const VitEncoder* b = &model;
        if (!a.checkpoint_b.empty()) {
            other = encoder_from_checkpoint(load_checkpoint(a.checkpoint_b));
            require(other.cfg.image_size == model.cfg.image_size &&
                        other.cfg.patch_size == model.cfg.patch_size,
                    "analyze: cka models must share the patch grid");
            b = &other;
        }
        inputs.metadata["model_b"] = a.checkpoint_b.empty()
                                         ? inputs.metadata["model_a"]
                                         : a.checkpoint_b;
        inputs.similarity = layer_similarity_matrix(
            model, *b, images, a.batch_size, a.max_batches,
            a.per_token ? GramExamples::per_token : GramExamples::per_image);
    } else {
        inputs.attention =
            collect_attention_stats(model, images, a.batch_size, a.max_batches);
    }
    emit_report(out_dir, inputs);
    return (fs::path(out_dir) / "manifest.json").string();
}

// --- whole-experiment driver -------------------------------------------------------------

void run_experiment(const Config& raw, const std::string& out_dir) {
    std::vector<std::string> arm_names;
    for (const std::string& name : raw.section_names()) {
        if (name.rfind("sweep.", 0) == 0) arm_names.push_back(name.substr(6));
    }

    const auto run_stages = [&](const Config& conf, const std::string& dir) {
        ExperimentConfig cfg = ExperimentConfig::from_config(conf);
        std::vector<std::string> stages;
        std::string pretrain_ckpt;
        if (conf.has_section("pretrain")) {
            pretrain_ckpt = run_pretrain(cfg, (fs::path(dir) / "pretrain").string());
            stages.push_back("pretrain");
        }
        if (conf.has_section("finetune")) {
            if (cfg.finetune_init.empty()) cfg.finetune_init = pretrain_ckpt;
            run_finetune(cfg, (fs::path(dir) / "finetune").string());
            stages.push_back("finetune");
        }
        if (conf.has_section("probe")) {
            if (cfg.probe_checkpoint.empty()) cfg.probe_checkpoint = pretrain_ckpt;
            run_probe(cfg, (fs::path(dir) / "probe").string());
            stages.push_back("probe");
        }
        if (conf.has_section("analyze")) {
            if (cfg.analyze.checkpoint.empty()) cfg.analyze.checkpoint = pretrain_ckpt;
            run_analyze(cfg, (fs::path(dir) / "analyze").string());
            stages.push_back("analyze");
        }
        require(!stages.empty(),
                "run: config defines no stage section (pretrain/finetune/probe/analyze)");
        return stages;
    };

    ensure_dir(out_dir);
    if (arm_names.empty()) {
        const std::vector<std::string> stages = run_stages(raw, out_dir);
        write_manifest(out_dir, "run", stages, json{{"arms", json::array()}});
        return;
    }

    std::sort(arm_names.begin(), arm_names.end());
    std::vector<std::string> stages;
    for (const std::string& arm : arm_names) {
        Config conf = raw;
        for (const auto& [path, value] : raw.section("sweep." + arm)) {
            conf.apply_override(path + "=" + value);
        }
        stages = run_stages(conf, (fs::path(out_dir) / arm).string());
    }
    write_manifest(out_dir, "run", stages, json{{"arms", arm_names}});
}

}  // namespace mimlite
