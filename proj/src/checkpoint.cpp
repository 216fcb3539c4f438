#include "mimlite/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace mimlite {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

// --- little-endian primitives ------------------------------------------------

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
}

class Reader {
public:
    Reader(const std::string& buf, std::size_t offset) : buf_(buf), pos_(offset) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw InputError("checkpoint: truncated file");
    }
    const std::string& buf_;
    std::size_t pos_;
};

int require_int(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) {
        throw InputError(std::string("checkpoint: metadata missing integer field '") + key + "'");
    }
    return j[key].get<int>();
}

double require_double(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) {
        throw InputError(std::string("checkpoint: metadata missing numeric field '") + key + "'");
    }
    return j[key].get<double>();
}

bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }

}  // namespace

const Mat* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) return &m;
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string payload;
    const std::string meta = ckpt.metadata.dump();
    put_u64(payload, meta.size());
    payload += meta;
    put_u32(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        put_u32(payload, static_cast<std::uint32_t>(name.size()));
        payload += name;
        put_u64(payload, static_cast<std::uint64_t>(m.rows()));
        put_u64(payload, static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(payload, m(r, c));
    }

    std::string header;
    header.append(kMagic, 4);
    put_u32(header, kVersion);
    put_u64(header, fnv1a(payload.data(), payload.size()));
    put_u64(header, payload.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "checkpoint: cannot open for writing: " + path);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    f.flush();
    require(f.good(), "checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw InputError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 24 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw InputError("checkpoint: not a checkpoint file: " + path);
    }
    Reader header(buf, 4);
    const std::uint32_t version = header.u32();
    if (version != kVersion) {
        throw InputError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint64_t checksum = header.u64();
    const std::uint64_t payload_size = header.u64();
    const std::size_t payload_start = header.pos();
    if (buf.size() - payload_start != payload_size) {
        throw InputError("checkpoint: truncated file");
    }
    if (fnv1a(buf.data() + payload_start, payload_size) != checksum) {
        throw InputError("checkpoint: checksum mismatch (corrupted file)");
    }

    Reader r(buf, payload_start);
    Checkpoint ckpt;
    const std::uint64_t meta_len = r.u64();
    const std::string meta = r.bytes(meta_len);
    try {
        ckpt.metadata = json::parse(meta);
    } catch (const json::exception& e) {
        throw InputError(std::string("checkpoint: bad metadata json: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const std::uint64_t rows = r.u64();
        const std::uint64_t cols = r.u64();
        if (rows > (1u << 24) || cols > (1u << 24)) {
            throw InputError("checkpoint: implausible tensor shape for " + name);
        }
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (std::uint64_t rr = 0; rr < rows; ++rr)
            for (std::uint64_t cc = 0; cc < cols; ++cc)
                m(static_cast<Eigen::Index>(rr), static_cast<Eigen::Index>(cc)) = r.f64();
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ckpt;
}

// --- config <-> json -----------------------------------------------------------

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
                {"in_channels", cfg.in_channels}, {"depth", cfg.depth},
                {"embed_dim", cfg.embed_dim},    {"num_heads", cfg.num_heads},
                {"mlp_ratio", cfg.mlp_ratio},    {"num_classes", cfg.num_classes}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.image_size = require_int(j, "image_size");
    cfg.patch_size = require_int(j, "patch_size");
    cfg.in_channels = require_int(j, "in_channels");
    cfg.depth = require_int(j, "depth");
    cfg.embed_dim = require_int(j, "embed_dim");
    cfg.num_heads = require_int(j, "num_heads");
    cfg.mlp_ratio = require_double(j, "mlp_ratio");
    cfg.num_classes = require_int(j, "num_classes");
    cfg.validate();
    return cfg;
}

json decoder_config_to_json(const DecoderConfig& cfg) {
    return json{{"depth", cfg.depth},
                {"embed_dim", cfg.embed_dim},
                {"num_heads", cfg.num_heads},
                {"mlp_ratio", cfg.mlp_ratio}};
}

DecoderConfig decoder_config_from_json(const json& j) {
    DecoderConfig cfg;
    cfg.depth = require_int(j, "depth");
    cfg.embed_dim = require_int(j, "embed_dim");
    cfg.num_heads = require_int(j, "num_heads");
    cfg.mlp_ratio = require_double(j, "mlp_ratio");
    cfg.validate();
    return cfg;
}

// --- model state -------------------------------------------------------------------

namespace {

void merge_extra(json& metadata, const json& extra) {
    if (extra.is_null()) return;
    require(extra.is_object(), "checkpoint: extra metadata must be a json object");
    for (const auto& [k, v] : extra.items()) metadata[k] = v;
}

}  // namespace

Checkpoint encoder_state(const VitEncoder& model, json extra) {
    Checkpoint ckpt;
    ckpt.metadata = json{{"kind", "encoder"}, {"model", model_config_to_json(model.cfg)}};
    merge_extra(ckpt.metadata, extra);
    for (const NamedParam& p : model.named_params()) {
        ckpt.tensors.emplace_back(p.name, ag::value(p.var));
    }
    ckpt.tensors.emplace_back("pos_embed", model.pos_embed);
    return ckpt;
}

Checkpoint decoder_state(const MaeDecoder& decoder, json extra) {
    Checkpoint ckpt;
    ckpt.metadata = json{{"kind", "decoder"},
                         {"decoder", decoder_config_to_json(decoder.cfg)},
                         {"enc_dim", decoder.enc_dim},
                         {"patch_dim", decoder.patch_dim},
                         {"grid_rows", decoder.grid.rows},
                         {"grid_cols", decoder.grid.cols}};
    merge_extra(ckpt.metadata, extra);
    for (const NamedParam& p : decoder.named_params()) {
        ckpt.tensors.emplace_back(p.name, ag::value(p.var));
    }
    ckpt.tensors.emplace_back("decoder.pos_embed", decoder.pos_embed);
    return ckpt;
}

void load_encoder_state(VitEncoder& model, const Checkpoint& ckpt,
                        bool allow_head_mismatch) {
    if (ckpt.metadata.value("kind", "") != "encoder") {
        throw InputError("checkpoint: expected an encoder checkpoint");
    }
    std::map<std::string, ag::Var> params;
    for (const NamedParam& p : model.named_params()) params[p.name] = p.var;

    std::set<std::string> loaded;
    for (const auto& [name, value] : ckpt.tensors) {
        if (name == "pos_embed") {
            if (value.cols() != model.pos_embed.cols()) {
                throw InputError("checkpoint: position table width mismatch");
            }
            if (value.rows() == model.pos_embed.rows()) {
                model.pos_embed = value;
            } else {
                const ModelConfig src = model_config_from_json(ckpt.metadata.at("model"));
                const int side_from = src.image_size / src.patch_size;
                const int side_to = model.cfg.image_size / model.cfg.patch_size;
                model.pos_embed = resample_pos_embed(value, {side_from, side_from},
                                                     {side_to, side_to});
            }
            loaded.insert(name);
            continue;
        }
        auto it = params.find(name);
        if (it == params.end()) {
            if (allow_head_mismatch && is_head_tensor(name)) continue;
            throw InputError("checkpoint: unexpected tensor '" + name + "'");
        }
        Mat& dst = it->second->value;
        if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
            throw InputError("checkpoint: shape mismatch for '" + name + "'");
        }
        dst = value;
        loaded.insert(name);
    }
    for (const auto& [name, var] : params) {
        if (loaded.count(name)) continue;
        if (allow_head_mismatch && is_head_tensor(name)) continue;
        throw InputError("checkpoint: missing tensor '" + name + "'");
    }
    if (!loaded.count("pos_embed")) {
        throw InputError("checkpoint: missing tensor 'pos_embed'");
    }
}

void load_decoder_state(MaeDecoder& decoder, const Checkpoint& ckpt) {
    if (ckpt.metadata.value("kind", "") != "decoder") {
        throw InputError("checkpoint: expected a decoder checkpoint");
    }
    std::map<std::string, ag::Var> params;
    for (const NamedParam& p : decoder.named_params()) params[p.name] = p.var;

    std::set<std::string> loaded;
    for (const auto& [name, value] : ckpt.tensors) {
        if (name == "decoder.pos_embed") {
            require(value.rows() == decoder.pos_embed.rows() &&
                        value.cols() == decoder.pos_embed.cols(),
                    "checkpoint: decoder position table shape mismatch");
            decoder.pos_embed = value;
            loaded.insert(name);
            continue;
        }
        auto it = params.find(name);
        if (it == params.end()) throw InputError("checkpoint: unexpected tensor '" + name + "'");
        Mat& dst = it->second->value;
        if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
            throw InputError("checkpoint: shape mismatch for '" + name + "'");
        }
        dst = value;
        loaded.insert(name);
    }
    for (const auto& [name, var] : params) {
        if (!loaded.count(name)) throw InputError("checkpoint: missing tensor '" + name + "'");
    }
}

VitEncoder encoder_from_checkpoint(const Checkpoint& ckpt, int num_classes_override) {
    if (!ckpt.metadata.contains("model")) {
        throw InputError("checkpoint: metadata has no model config");
    }
    ModelConfig cfg = model_config_from_json(ckpt.metadata.at("model"));
    bool head_mismatch = false;
    if (num_classes_override >= 0 && num_classes_override != cfg.num_classes) {
        cfg.num_classes = num_classes_override;
        head_mismatch = true;
    }
    const std::uint64_t seed = ckpt.metadata.value("seed", std::uint64_t{0});
    VitEncoder model = VitEncoder::build(cfg, seed);
    load_encoder_state(model, ckpt, head_mismatch);
    return model;
}

}  // namespace mimlite
