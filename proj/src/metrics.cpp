#include "ubergnn/metrics.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ubergnn {

std::size_t rank_of_label(const std::vector<double>& probs, std::size_t label) {
    if (label >= probs.size()) {
        throw std::invalid_argument("rank_of_label: label out of range");
    }
    const double pl = probs[label];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (probs[j] > pl || (probs[j] == pl && j < label)) ++rank;
    }
    return rank;
}

namespace {

std::vector<std::size_t> label_ranks(const std::vector<std::vector<std::size_t>>& rankings,
                                     const std::vector<std::size_t>& labels) {
    if (rankings.empty() || rankings.size() != labels.size()) {
        throw std::invalid_argument("metrics: empty case set or ranking/label mismatch");
    }
    std::vector<std::size_t> ranks;
    ranks.reserve(rankings.size());
    for (std::size_t c = 0; c < rankings.size(); ++c) {
        auto it = std::find(rankings[c].begin(), rankings[c].end(), labels[c]);
        // label absent from a truncated ranking counts as beyond any cutoff
        ranks.push_back(it == rankings[c].end()
                            ? rankings[c].size() + 1
                            : static_cast<std::size_t>(it - rankings[c].begin()) + 1);
    }
    return ranks;
}

}  // namespace

EvalResult evaluate_ranks(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) {
        throw std::invalid_argument("evaluate_ranks: empty case set");
    }
    EvalResult r;
    r.k = k;
    r.n_cases = ranks.size();
    for (std::size_t rank : ranks) {
        if (rank >= 1 && rank <= k) {
            r.p_at_k += 1.0;
            r.mrr_at_k += 1.0 / static_cast<double>(rank);
        }
    }
    r.p_at_k /= static_cast<double>(ranks.size());
    r.mrr_at_k /= static_cast<double>(ranks.size());
    return r;
}

double precision_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                      const std::vector<std::size_t>& labels, std::size_t k) {
    return evaluate_ranks(label_ranks(rankings, labels), k).p_at_k;
}

double mrr_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::size_t>& labels, std::size_t k) {
    return evaluate_ranks(label_ranks(rankings, labels), k).mrr_at_k;
}

std::string eval_result_json(const EvalResult& r) {
    nlohmann::json doc;
    doc["k"] = r.k;
    doc["p_at_k"] = r.p_at_k;
    doc["mrr_at_k"] = r.mrr_at_k;
    doc["n_cases"] = r.n_cases;
    return doc.dump() + "\n";
}

std::string eval_result_table(const EvalResult& r) {
    std::ostringstream out;
    out << "metric      value\n";
    out << "P@" << r.k << "        " << r.p_at_k << "\n";
    out << "MRR@" << r.k << "      " << r.mrr_at_k << "\n";
    out << "cases       " << r.n_cases << "\n";
    return out.str();
}

}  // namespace ubergnn
