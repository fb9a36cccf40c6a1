#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ubergnn/data.hpp"

namespace ubergnn {

struct SyntheticConfig {
    std::size_t n_items = 500;
    std::size_t n_users = 200;
    std::size_t n_clusters = 5;
    std::size_t sessions_per_user = 10;
    std::size_t len_min = 3;
    std::size_t len_max = 10;
    std::size_t n_cat_fields = 4;
    std::size_t n_cont_fields = 3;
    std::uint64_t seed = 1;
};

struct SyntheticData {
    std::vector<InteractionRecord> interactions;
    // user_id -> field -> raw value, insertion order preserved by user index
    std::vector<std::pair<std::string, std::map<std::string, std::string>>> portraits;
    UserFeatureSchema schema;

    // Ground truth, available in memory for oracle tests but never written
    // to the three output files.
    std::vector<std::size_t> user_cluster;
    std::vector<std::vector<std::size_t>> cluster_pool;  // preferred items per cluster
    // Which recent pool item drives the walk: 1 = the last pool item,
    // 2 = the one before it. Fixed per cluster.
    std::vector<std::size_t> cluster_lag;
    std::size_t chain_fanout = 12;  // equally likely successors per step

    // The `chain_fanout` successor items of pool position `pool_pos` under
    // `cluster`'s shared offset rule.
    std::vector<std::size_t> chain_successors(std::size_t cluster,
                                              std::size_t pool_pos) const;

    std::string item_id(std::size_t index) const;
};

// Users belong to latent clusters; each cluster walks a stochastic chain over
// its preferred item subset, driven by the item one or two steps back
// depending on the cluster, and portrait fields are noisy functions of the
// cluster. Deterministic per seed.
SyntheticData gen_synthetic(const SyntheticConfig& config);

// Writes interactions CSV, portraits CSV and schema JSON; byte-identical
// across runs for the same config.
void write_synthetic(const SyntheticData& data, const std::string& interactions_path,
                     const std::string& portraits_path, const std::string& schema_path);

}  // namespace ubergnn
