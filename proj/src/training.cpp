#include "ubergnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ubergnn/optim.hpp"
#include "ubergnn/rng.hpp"
#include "ubergnn/session_graph.hpp"

namespace ubergnn {

namespace {

struct PairCase {
    SessionGraph graph;
    std::size_t label = 0;
    const UserFeatureVector* user = nullptr;
};

const UserFeatureVector& portrait_for(const PortraitMap& portraits,
                                      const std::string& user_id,
                                      const UserFeatureVector& unknown) {
    auto it = portraits.find(user_id);
    return it == portraits.end() ? unknown : it->second;
}

std::vector<PairCase> expand_cases(const std::vector<Session>& sessions,
                                   const PortraitMap& portraits,
                                   const UserFeatureVector& unknown) {
    std::vector<PairCase> cases;
    for (const Session& s : sessions) {
        const UserFeatureVector& user = portrait_for(portraits, s.user_id, unknown);
        for (std::size_t k = 1; k < s.items.size(); ++k) {
            PairCase c;
            c.graph = build_graph(
                std::vector<std::size_t>(s.items.begin(), s.items.begin() + k));
            c.label = s.items[k];
            c.user = &user;
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

EvalResult evaluate_cases(const Model& model, const std::vector<PairCase>& cases,
                          std::size_t k) {
    std::vector<std::size_t> ranks;
    ranks.reserve(cases.size());
    ExampleTrace trace;
    for (const PairCase& c : cases) {
        model_forward(model, c.graph, *c.user, c.label, &trace);
        ranks.push_back(rank_of_label(trace.pred.probs, c.label));
    }
    return evaluate_ranks(ranks, k);
}

}  // namespace

PortraitMap encode_portraits(
    const std::map<std::string, std::map<std::string, std::string>>& raw,
    const UserFeatureSchema& schema) {
    PortraitMap out;
    for (const auto& [user, fields] : raw) {
        out[user] = encode_user(fields, schema);
    }
    return out;
}

TrainResult train(const std::vector<Session>& sessions, const PortraitMap& portraits,
                  const ItemVocabulary& vocabulary, const UserFeatureSchema& schema,
                  const TrainConfig& config) {
    if (sessions.empty()) {
        throw std::invalid_argument("train: empty train set");
    }
    if (config.batch_size == 0 || config.epochs == 0) {
        throw std::invalid_argument("train: batch size and epochs must be >= 1");
    }
    const UserFeatureVector unknown = encode_user({}, schema);

    // Validation carve-out, deterministic per seed and independent of the
    // per-epoch shuffles.
    std::vector<std::size_t> order(sessions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    split_rng.shuffle(order);
    auto n_val = static_cast<std::size_t>(std::llround(
        config.validation_fraction * static_cast<double>(sessions.size())));
    if (n_val >= sessions.size()) n_val = sessions.size() - 1;
    std::vector<Session> val_sessions, train_sessions;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_val ? val_sessions : train_sessions).push_back(sessions[order[i]]);
    }

    const std::vector<PairCase> train_cases =
        expand_cases(train_sessions, portraits, unknown);
    const std::vector<PairCase> val_cases = expand_cases(val_sessions, portraits, unknown);
    if (train_cases.empty()) {
        throw std::invalid_argument("train: no (prefix, label) pairs to train on");
    }

    Model model = build_model(config.model, vocabulary.size(), schema.total_width(),
                              config.seed);
    auto params = model.parameters();
    std::vector<AdamState> states;
    states.reserve(params.size());
    for (Parameter* p : params) states.emplace_back(*p);

    TrainResult result;
    double best_p20 = -1.0;
    Rng shuffle_rng(config.seed);
    std::vector<std::size_t> case_order(train_cases.size());
    std::iota(case_order.begin(), case_order.end(), std::size_t{0});
    ExampleTrace trace;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch);
        shuffle_rng.shuffle(case_order);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < case_order.size();
             start += config.batch_size, ++batch_index) {
            const std::size_t end =
                std::min(start + config.batch_size, case_order.size());
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const PairCase& c = train_cases[case_order[i]];
                const double loss = model_forward(model, c.graph, *c.user, c.label, &trace);
                if (!std::isfinite(loss)) {
                    throw TrainingDivergenceError(
                        "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch_index));
                }
                loss_sum += loss;
                model_backward(model, c.graph, *c.user, trace, scale);
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                adam_step(*params[p], states[p], lr, config.l2);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_cases.size());
        rec.lr = lr;
        if (!val_cases.empty()) {
            const EvalResult val = evaluate_cases(model, val_cases, config.metric_k);
            rec.val_p20 = val.p_at_k;
            rec.val_mrr20 = val.mrr_at_k;
        }
        result.log.push_back(rec);

        const bool is_best = val_cases.empty() ? epoch + 1 == config.epochs
                                               : rec.val_p20 > best_p20;
        if (is_best) {
            best_p20 = rec.val_p20;
            result.best.model = model;
            result.best.epoch = epoch;
            result.best.val_p20 = rec.val_p20;
            result.best.val_mrr20 = rec.val_mrr20;
        }
    }
    result.best.vocabulary = vocabulary;
    result.best.schema = schema;
    return result;
}

EvalResult evaluate_model(const Model& model, const std::vector<Session>& sessions,
                          const PortraitMap& portraits, const UserFeatureSchema& schema,
                          std::size_t k) {
    const UserFeatureVector unknown = encode_user({}, schema);
    const auto cases = expand_cases(sessions, portraits, unknown);
    if (cases.empty()) {
        throw std::invalid_argument("evaluate_model: no (prefix, label) pairs");
    }
    return evaluate_cases(model, cases, k);
}

std::vector<Recommendation> recommend(const Checkpoint& ckpt,
                                      const std::map<std::string, std::string>& portrait,
                                      const std::vector<std::string>& prefix_item_ids,
                                      std::size_t k) {
    if (prefix_item_ids.empty() || k == 0) {
        throw std::invalid_argument("recommend: need a non-empty prefix and k >= 1");
    }
    std::vector<std::size_t> items;
    for (const std::string& id : prefix_item_ids) {
        const auto idx = ckpt.vocabulary.index_of(id);
        if (idx >= 0) items.push_back(static_cast<std::size_t>(idx));
    }
    if (items.empty()) {
        throw RecommendationError("recommend: no prefix item is in the vocabulary");
    }
    const UserFeatureVector x = encode_user(portrait, ckpt.schema);
    const SessionGraph graph = build_graph(items);
    ExampleTrace trace;
    model_forward(ckpt.model, graph, x, /*label=*/0, &trace);
    const std::vector<double>& probs = trace.pred.probs;

    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::vector<Recommendation> out;
    for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) {
        out.push_back({ckpt.vocabulary.id_of(idx[i]), probs[idx[i]]});
    }
    return out;
}

std::string epoch_record_json(const EpochRecord& r) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_p20"] = r.val_p20;
    j["val_mrr20"] = r.val_mrr20;
    j["lr"] = r.lr;
    return j.dump() + "\n";
}

}  // namespace ubergnn
