#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ubergnn/checkpoint.hpp"
#include "ubergnn/data.hpp"
#include "ubergnn/metrics.hpp"
#include "ubergnn/model.hpp"

namespace ubergnn {

struct RecommendationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    ModelConfig model;
    // Large batches keep the 0.1 learning-rate decade from inflating the
    // weights into sigmoid saturation before the 0.01 phase begins.
    std::size_t batch_size = 256;
    std::size_t epochs = 30;
    double l2 = 1e-5;
    std::uint64_t seed = 1;
    double validation_fraction = 0.2;
    std::size_t metric_k = 20;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_p20 = 0.0;
    double val_mrr20 = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochRecord> log;
};

using PortraitMap = std::map<std::string, UserFeatureVector>;

PortraitMap encode_portraits(
    const std::map<std::string, std::map<std::string, std::string>>& raw,
    const UserFeatureSchema& schema);

// Mini-batch end-to-end training with per-epoch validation on a carved-out
// fraction of the input sessions. Deterministic per (config, seed); the
// best-validation-P@k checkpoint is retained.
TrainResult train(const std::vector<Session>& sessions, const PortraitMap& portraits,
                  const ItemVocabulary& vocabulary, const UserFeatureSchema& schema,
                  const TrainConfig& config);

// Ranking metrics over every (prefix, label) pair expanded from `sessions`.
EvalResult evaluate_model(const Model& model, const std::vector<Session>& sessions,
                          const PortraitMap& portraits, const UserFeatureSchema& schema,
                          std::size_t k = 20);

struct Recommendation {
    std::string item_id;
    double probability = 0.0;
};

// Top-k items for one session prefix; ties broken by ascending item index.
// Unknown users work through the all-unknown portrait encoding; a prefix
// with no in-vocabulary item is an error.
std::vector<Recommendation> recommend(const Checkpoint& ckpt,
                                      const std::map<std::string, std::string>& portrait,
                                      const std::vector<std::string>& prefix_item_ids,
                                      std::size_t k);

std::string epoch_record_json(const EpochRecord& r);

}  // namespace ubergnn
