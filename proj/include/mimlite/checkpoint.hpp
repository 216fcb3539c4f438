#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mimlite/mae.hpp"
#include "mimlite/vit.hpp"

namespace mimlite {

// Self-describing binary container: a JSON metadata document plus named f64
// tensors, checksummed so truncated or corrupted files are rejected before any
// tensor is parsed.
struct Checkpoint {
    nlohmann::json metadata;
    std::vector<std::pair<std::string, Mat>> tensors;

    const Mat* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // throws InputError on bad files

// --- config <-> json ---------------------------------------------------------------

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json decoder_config_to_json(const DecoderConfig& cfg);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

// --- model state -------------------------------------------------------------------

// Captures every learnable tensor plus the fixed position table.  `extra`
// entries are merged into the metadata next to the embedded model config.
Checkpoint encoder_state(const VitEncoder& model, nlohmann::json extra = {});
Checkpoint decoder_state(const MaeDecoder& decoder, nlohmann::json extra = {});

// Copies tensors by name into a built model.  Position tables from a different
// grid are resampled onto the target grid.  Any other shape mismatch, missing
// tensor, or unexpected tensor is an InputError.  With `allow_head_mismatch`,
// "head.*" tensors may be absent or extra (probing or attaching a fresh head).
void load_encoder_state(VitEncoder& model, const Checkpoint& ckpt,
                        bool allow_head_mismatch = false);
void load_decoder_state(MaeDecoder& decoder, const Checkpoint& ckpt);

// Builds the encoder described by the checkpoint's own embedded config and
// loads the weights.  `num_classes_override` >= 0 replaces the stored class
// count (the head is then freshly initialised from the model seed).
VitEncoder encoder_from_checkpoint(const Checkpoint& ckpt, int num_classes_override = -1);

}  // namespace mimlite
