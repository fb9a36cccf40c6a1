#include "ubergnn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ubergnn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'U', 'B', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr const char* kVersion = "1";

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const std::string& bytes, std::size_t offset) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i]))
             << (8 * i);
    }
    return v;
}

void append_f64_le(std::string& out, double d) {
    append_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

}  // namespace

std::string model_config_to_json_text(const ModelConfig& cfg) {
    json j;
    j["hidden"] = cfg.hidden;
    j["user_dim"] = cfg.user_dim;
    j["fm_dim"] = cfg.fm_dim;
    j["dnn_hidden"] = cfg.dnn_hidden;
    j["variant"] = to_string(cfg.variant);
    j["prop_steps"] = cfg.prop_steps;
    j["tie_reset_update_input"] = cfg.tie_reset_update_input;
    j["loss_mode"] = to_string(cfg.loss_mode);
    return j.dump();
}

ModelConfig model_config_from_json_text(const std::string& text) {
    json j = json::parse(text);
    ModelConfig cfg;
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.user_dim = j.at("user_dim").get<std::size_t>();
    cfg.fm_dim = j.at("fm_dim").get<std::size_t>();
    cfg.dnn_hidden = j.at("dnn_hidden").get<std::vector<std::size_t>>();
    cfg.variant = variant_from_string(j.at("variant").get<std::string>());
    cfg.prop_steps = j.at("prop_steps").get<std::size_t>();
    cfg.tie_reset_update_input = j.at("tie_reset_update_input").get<bool>();
    cfg.loss_mode = loss_mode_from_string(j.at("loss_mode").get<std::string>());
    return cfg;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["version"] = kVersion;
    header["model_config"] = json::parse(model_config_to_json_text(ckpt.model.cfg));
    header["vocab_size"] = ckpt.model.vocab_size;
    header["feature_width"] = ckpt.model.feature_width;
    header["vocabulary"] = ckpt.vocabulary.ids();
    header["schema"] = json::parse(schema_to_json_text(ckpt.schema));
    header["epoch"] = ckpt.epoch;
    header["val_p20"] = ckpt.val_p20;
    header["val_mrr20"] = ckpt.val_mrr20;
    json params = json::array();
    for (const Parameter* p : ckpt.model.parameters()) {
        params.push_back({{"name", p->name},
                          {"rows", p->value.rows()},
                          {"cols", p->value.cols()}});
    }
    header["params"] = std::move(params);
    const std::string header_text = header.dump();

    std::string bytes(kMagic, sizeof(kMagic));
    append_u64_le(bytes, header_text.size());
    bytes += header_text;
    for (const Parameter* p : ckpt.model.parameters()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            append_f64_le(bytes, p->value[i]);
        }
    }
    append_u64_le(bytes, fnv1a64(bytes));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    if (bytes.size() < sizeof(kMagic) + 16 ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a checkpoint file: " + path);
    }
    const std::uint64_t stored_sum = read_u64_le(bytes, bytes.size() - 8);
    if (fnv1a64(bytes.substr(0, bytes.size() - 8)) != stored_sum) {
        throw CheckpointError("checkpoint integrity check failed: " + path);
    }
    const std::uint64_t header_len = read_u64_le(bytes, sizeof(kMagic));
    const std::size_t header_start = sizeof(kMagic) + 8;
    if (header_start + header_len + 8 > bytes.size()) {
        throw CheckpointError("truncated checkpoint header: " + path);
    }
    json header;
    try {
        header = json::parse(bytes.substr(header_start, header_len));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto version = header.at("version").get<std::string>();
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version \"" + version +
                              "\" (expected \"" + kVersion + "\")");
    }

    Checkpoint ckpt;
    const ModelConfig cfg = model_config_from_json_text(header.at("model_config").dump());
    const auto vocab_size = header.at("vocab_size").get<std::size_t>();
    const auto feature_width = header.at("feature_width").get<std::size_t>();
    ckpt.model = build_model(cfg, vocab_size, feature_width, /*seed=*/0);
    ckpt.vocabulary =
        ItemVocabulary(header.at("vocabulary").get<std::vector<std::string>>());
    ckpt.schema = schema_from_json_text(header.at("schema").dump());
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    ckpt.val_p20 = header.at("val_p20").get<double>();
    ckpt.val_mrr20 = header.at("val_mrr20").get<double>();

    std::size_t offset = header_start + header_len;
    auto params = ckpt.model.parameters();
    const auto& descs = header.at("params");
    if (descs.size() != params.size()) {
        throw CheckpointError("checkpoint parameter list does not match model layout");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& desc = descs[i];
        if (desc.at("name").get<std::string>() != params[i]->name ||
            desc.at("rows").get<std::size_t>() != params[i]->value.rows() ||
            desc.at("cols").get<std::size_t>() != params[i]->value.cols()) {
            throw CheckpointError("checkpoint parameter mismatch at " + params[i]->name);
        }
        const std::size_t count = params[i]->value.size();
        if (offset + 8 * count + 8 > bytes.size()) {
            throw CheckpointError("truncated checkpoint data: " + path);
        }
        for (std::size_t k = 0; k < count; ++k) {
            params[i]->value[k] = std::bit_cast<double>(read_u64_le(bytes, offset));
            offset += 8;
        }
        params[i]->zero_grad();
    }
    if (offset + 8 != bytes.size()) {
        throw CheckpointError("trailing bytes in checkpoint: " + path);
    }
    return ckpt;
}

}  // namespace ubergnn
