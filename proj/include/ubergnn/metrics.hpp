#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ubergnn {

struct EvalResult {
    double p_at_k = 0.0;
    double mrr_at_k = 0.0;
    std::size_t n_cases = 0;
    std::size_t k = 20;
};

// 1-based rank of the label under deterministic ordering: probability
// descending, ties broken by ascending item index.
std::size_t rank_of_label(const std::vector<double>& probs, std::size_t label);

// Hit rate: fraction of cases whose label appears in the top k.
double precision_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                      const std::vector<std::size_t>& labels, std::size_t k = 20);

// Mean of 1/rank when rank <= k, else 0.
double mrr_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                const std::vector<std::size_t>& labels, std::size_t k = 20);

// Same metrics from precomputed 1-based label ranks.
EvalResult evaluate_ranks(const std::vector<std::size_t>& ranks, std::size_t k = 20);

std::string eval_result_json(const EvalResult& r);
std::string eval_result_table(const EvalResult& r);

}  // namespace ubergnn
