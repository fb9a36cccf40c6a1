#include "ubergnn/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ubergnn/rng.hpp"

namespace ubergnn {

namespace {

std::string padded(const char* prefix, std::size_t index, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, index);
    return buf;
}

}  // namespace

std::string SyntheticData::item_id(std::size_t index) const {
    return padded("i", index, 5);
}

SyntheticData gen_synthetic(const SyntheticConfig& config) {
    if (config.n_clusters == 0 || config.n_items < config.n_clusters) {
        throw std::invalid_argument("gen_synthetic: need n_items >= n_clusters >= 1");
    }
    if (config.len_min < 2 || config.len_max < config.len_min) {
        throw std::invalid_argument("gen_synthetic: invalid session length range");
    }
    if (config.n_users == 0 || config.sessions_per_user == 0) {
        throw std::invalid_argument("gen_synthetic: need users and sessions");
    }
    if (config.n_cat_fields == 0 && config.n_cont_fields == 0) {
        throw std::invalid_argument("gen_synthetic: need at least one portrait field");
    }

    SyntheticData data;
    Rng rng(config.seed);

    // Preferred pools: items split round-robin over the clusters.
    data.cluster_pool.resize(config.n_clusters);
    for (std::size_t i = 0; i < config.n_items; ++i) {
        data.cluster_pool[i % config.n_clusters].push_back(i);
    }

    // Alternate the driving lag across clusters: odd clusters continue the
    // walk from the item before the last one. Both lags share the same
    // successor offsets, so the candidate set for a prefix is the union of
    // both lags' fan-outs and picking the right half requires knowing the
    // user's cluster.
    data.cluster_lag.resize(config.n_clusters);
    for (std::size_t c = 0; c < config.n_clusters; ++c) {
        data.cluster_lag[c] = 1 + c % 2;
    }

    // Schema: categorical fields over cluster labels, continuous fields
    // binned around cluster-dependent means.
    for (std::size_t j = 0; j < config.n_cat_fields; ++j) {
        FieldSpec f;
        f.kind = FieldSpec::Kind::Categorical;
        f.name = "cat" + std::to_string(j);
        for (std::size_t c = 0; c < config.n_clusters; ++c) {
            f.categories.push_back("c" + std::to_string(c));
        }
        data.schema.fields.push_back(std::move(f));
    }
    for (std::size_t j = 0; j < config.n_cont_fields; ++j) {
        FieldSpec f;
        f.kind = FieldSpec::Kind::Continuous;
        f.name = "cont" + std::to_string(j);
        if (config.n_clusters == 1) {
            f.edges = {5.0};
        } else {
            for (std::size_t c = 0; c + 1 < config.n_clusters; ++c) {
                f.edges.push_back(10.0 * static_cast<double>(c) + 5.0);
            }
        }
        data.schema.fields.push_back(std::move(f));
    }
    data.schema.validate();

    // Users: cluster assignment and noisy portraits.
    data.user_cluster.resize(config.n_users);
    for (std::size_t u = 0; u < config.n_users; ++u) {
        const std::size_t cluster = u % config.n_clusters;
        data.user_cluster[u] = cluster;
        std::map<std::string, std::string> row;
        for (std::size_t j = 0; j < config.n_cat_fields; ++j) {
            std::size_t value = cluster;
            if (rng.uniform() >= 0.85) value = rng.below(config.n_clusters);
            row["cat" + std::to_string(j)] = "c" + std::to_string(value);
        }
        for (std::size_t j = 0; j < config.n_cont_fields; ++j) {
            const double v = 10.0 * static_cast<double>(cluster) + rng.gaussian(2.5);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", v);
            row["cont" + std::to_string(j)] = buf;
        }
        data.portraits.emplace_back(padded("u", u, 4), std::move(row));
    }

    // Sessions: lag-driven walks over the user's cluster pool with light
    // noise. Distractor emissions do not advance the walk state, and the
    // residual chain mass restarts the walk inside the pool.
    const double kNoise = 0.05;
    const double kStepProb = 0.07;  // per successor offset
    const double kChainMass = kStepProb * static_cast<double>(data.chain_fanout);
    std::int64_t ts = 0;
    for (std::size_t u = 0; u < config.n_users; ++u) {
        const std::size_t cluster = data.user_cluster[u];
        const auto& pool = data.cluster_pool[cluster];
        const std::size_t P = pool.size();
        const std::size_t lag = data.cluster_lag[cluster];
        for (std::size_t s = 0; s < config.sessions_per_user; ++s) {
            const std::size_t len =
                config.len_min + rng.below(config.len_max - config.len_min + 1);
            const std::string session_id =
                padded("u", u, 4) + "_s" + std::to_string(s);
            std::size_t kp = rng.below(P);
            std::size_t kc = rng.below(P);
            data.interactions.push_back(
                {padded("u", u, 4), data.item_id(pool[kc]), ts++, session_id});
            for (std::size_t step = 1; step < len; ++step) {
                std::size_t emit;
                if (rng.uniform() < kNoise) {
                    emit = rng.below(config.n_items);  // walk state unchanged
                } else {
                    const double roll = rng.uniform();
                    if (roll < kChainMass) {
                        const std::size_t o = 1 + static_cast<std::size_t>(roll / kStepProb);
                        const std::size_t src = lag == 1 ? kc : kp;
                        const std::size_t kn = (3 * src + o) % P;
                        kp = kc;
                        kc = kn;
                    } else {
                        kp = rng.below(P);
                        kc = rng.below(P);
                    }
                    emit = pool[kc];
                }
                data.interactions.push_back(
                    {padded("u", u, 4), data.item_id(emit), ts++, session_id});
            }
        }
    }
    return data;
}

std::vector<std::size_t> SyntheticData::chain_successors(std::size_t cluster,
                                                         std::size_t pool_pos) const {
    const auto& pool = cluster_pool.at(cluster);
    const std::size_t P = pool.size();
    std::vector<std::size_t> out;
    out.reserve(chain_fanout);
    for (std::size_t o = 1; o <= chain_fanout; ++o) {
        out.push_back(pool[(3 * pool_pos + o) % P]);
    }
    return out;
}

void write_synthetic(const SyntheticData& data, const std::string& interactions_path,
                     const std::string& portraits_path, const std::string& schema_path) {
    {
        std::ofstream out(interactions_path);
        if (!out) throw DataError("cannot write " + interactions_path);
        out << "user_id,item_id,timestamp,session_id\n";
        for (const auto& r : data.interactions) {
            out << r.user_id << ',' << r.item_id << ',' << r.timestamp << ','
                << r.session_id << '\n';
        }
    }
    {
        std::ofstream out(portraits_path);
        if (!out) throw DataError("cannot write " + portraits_path);
        out << "user_id";
        for (const auto& f : data.schema.fields) out << ',' << f.name;
        out << '\n';
        for (const auto& [user, row] : data.portraits) {
            out << user;
            for (const auto& f : data.schema.fields) {
                auto it = row.find(f.name);
                out << ',' << (it == row.end() ? "" : it->second);
            }
            out << '\n';
        }
    }
    {
        std::ofstream out(schema_path);
        if (!out) throw DataError("cannot write " + schema_path);
        out << schema_to_json_text(data.schema);
    }
}

}  // namespace ubergnn
