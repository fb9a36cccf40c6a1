#pragma once

#include <stdexcept>
#include <string>

#include "ubergnn/data.hpp"
#include "ubergnn/model.hpp"

namespace ubergnn {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    Model model;
    ItemVocabulary vocabulary;
    UserFeatureSchema schema;
    std::size_t epoch = 0;
    double val_p20 = 0.0;
    double val_mrr20 = 0.0;
};

std::string model_config_to_json_text(const ModelConfig& cfg);
ModelConfig model_config_from_json_text(const std::string& text);

// Single self-describing container: magic, JSON header (config, vocabulary,
// schema, parameter shapes), raw little-endian f64 blocks per named matrix,
// trailing FNV-1a 64 checksum of everything before it.
// Round trip is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ubergnn
