#pragma once

#include <string>

#include "mimlite/analysis.hpp"
#include "mimlite/checkpoint.hpp"
#include "mimlite/config.hpp"
#include "mimlite/data.hpp"
#include "mimlite/distill.hpp"
#include "mimlite/train_eval.hpp"

namespace mimlite {

// --- resolved experiment settings -----------------------------------------------

struct PretrainSettings {
    int epochs = 50;
    int batch_size = 64;
    double base_lr = 1.5e-4;  // per 256 examples
    double min_lr = 0.0;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    int warmup_epochs = 5;
    double mask_ratio = 0.75;
    bool normalize_targets = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AnalyzeSettings {
    std::string mode = "cka";  // cka | attention | reserve
    std::string checkpoint;    // primary model (empty = freshly built from [model])
    std::string checkpoint_b;  // optional second model for cka
    int batch_size = 16;
    int max_batches = 8;
    bool per_token = false;    // token-level Gram examples instead of per-image
    int keep_blocks = 0;       // reserve mode
    std::uint64_t seed = 0;

    void validate() const;
};

// Typed view of one configuration file.  Section schemas are enforced here, so
// a typo anywhere in a known section is an InputError before any work starts.
struct ExperimentConfig {
    ModelConfig model;
    DecoderConfig decoder;
    PretrainSettings pretrain;
    DistillConfig distill;
    Recipe finetune_recipe;
    std::string finetune_init;  // checkpoint to start finetuning from ("" = scratch)
    Recipe probe_recipe;
    std::string probe_checkpoint;  // encoder the probe freezes ("" = fresh build)
    AnalyzeSettings analyze;
    DatasetSpec data;

    static ExperimentConfig from_config(const Config& cfg);
};

// --- stages -----------------------------------------------------------------------
//
// Every stage writes its artifacts plus a manifest.json into `out_dir`
// (created if missing) and returns the path of its primary artifact.  All
// emitted files are deterministic for a fixed config.

// Masked-autoencoder pretraining (with optional distillation per [distill]).
// Artifacts: encoder.ckpt, decoder.ckpt, losses.csv, manifest.json.
std::string run_pretrain(const ExperimentConfig& cfg, const std::string& out_dir);

// Supervised fine-tuning.  Artifacts: model.ckpt, metrics.csv, manifest.json.
std::string run_finetune(const ExperimentConfig& cfg, const std::string& out_dir);

// Linear probe on frozen features.  Artifacts: metrics.csv, manifest.json.
std::string run_probe(const ExperimentConfig& cfg, const std::string& out_dir);

// Representation analysis (mode cka | attention | reserve).
std::string run_analyze(const ExperimentConfig& cfg, const std::string& out_dir);

// Runs every stage that has a section in the raw config, chaining the fresh
// pretraining checkpoint into later stages that do not name their own.  When
// [sweep.<name>] sections are present, the whole pipeline runs once per arm
// (each arm's key=value pairs are "section.key = value" overrides) into
// out_dir/<name>.
void run_experiment(const Config& raw, const std::string& out_dir);

// Dataset ingestion with an optional on-disk cache: when the MIMLITE_CACHE_DIR
// environment variable names a directory, ingested corpora are stored there
// keyed by a digest of the spec and reloaded bitwise-identically afterwards.
// Unreadable or stale entries are rebuilt in place; without the variable this
// is plain ingest_dataset.  All stages ingest through this entry point.
SplitDataset ingest_dataset_cached(const DatasetSpec& spec);

}  // namespace mimlite
