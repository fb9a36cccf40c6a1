#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ubergnn/metrics.hpp"
#include "ubergnn/rng.hpp"

using namespace ubergnn;

TEST_CASE("rank_of_label counts strictly better items plus earlier ties") {
    CHECK(rank_of_label({0.1, 0.5, 0.4}, 1) == 1);
    CHECK(rank_of_label({0.1, 0.5, 0.4}, 2) == 2);
    CHECK(rank_of_label({0.1, 0.5, 0.4}, 0) == 3);
    // ties break by ascending index
    CHECK(rank_of_label({0.3, 0.3, 0.3}, 0) == 1);
    CHECK(rank_of_label({0.3, 0.3, 0.3}, 1) == 2);
    CHECK(rank_of_label({0.3, 0.3, 0.3}, 2) == 3);
}

TEST_CASE("rank_of_label is invariant under monotone transforms") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> probs(12);
        for (double& p : probs) p = rng.uniform();
        std::vector<double> mapped(12);
        for (std::size_t i = 0; i < 12; ++i) mapped[i] = std::exp(3.0 * probs[i]) - 0.5;
        const std::size_t label = rng.below(12);
        CHECK(rank_of_label(probs, label) == rank_of_label(mapped, label));
    }
}

TEST_CASE("ranks 1, 2 and 25 at k=20 give P = 2/3 and MRR = 1/2 exactly") {
    const EvalResult r = evaluate_ranks({1, 2, 25}, 20);
    CHECK(r.p_at_k == 2.0 / 3.0);
    CHECK(r.mrr_at_k == 0.5);  // (1/1 + 1/2 + 0) / 3
    CHECK(r.n_cases == 3);
    CHECK(r.k == 20);
}

TEST_CASE("a rank exactly at the cutoff still counts") {
    const EvalResult r = evaluate_ranks({20}, 20);
    CHECK(r.p_at_k == 1.0);
    CHECK(r.mrr_at_k == 1.0 / 20.0);
    const EvalResult beyond = evaluate_ranks({21}, 20);
    CHECK(beyond.p_at_k == 0.0);
    CHECK(beyond.mrr_at_k == 0.0);
}

TEST_CASE("mrr never exceeds precision") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> ranks;
        for (int i = 0; i < 50; ++i) ranks.push_back(1 + rng.below(40));
        const EvalResult r = evaluate_ranks(ranks, 20);
        CHECK(r.mrr_at_k <= r.p_at_k + 1e-15);
        CHECK(r.p_at_k >= 0.0);
        CHECK(r.p_at_k <= 1.0);
    }
}

TEST_CASE("metrics over concatenated rank lists are case-weighted means") {
    const std::vector<std::size_t> a{1, 30}, b{2};
    std::vector<std::size_t> both = a;
    both.insert(both.end(), b.begin(), b.end());
    const EvalResult ra = evaluate_ranks(a, 20);
    const EvalResult rb = evaluate_ranks(b, 20);
    const EvalResult rc = evaluate_ranks(both, 20);
    CHECK(rc.p_at_k == doctest::Approx((2.0 * ra.p_at_k + 1.0 * rb.p_at_k) / 3.0));
    CHECK(rc.mrr_at_k == doctest::Approx((2.0 * ra.mrr_at_k + 1.0 * rb.mrr_at_k) / 3.0));
}

TEST_CASE("ranking-list metrics agree with the rank-based ones") {
    // rankings are ordered item lists; the label's position is its rank
    const std::vector<std::vector<std::size_t>> rankings{
        {7, 3, 5},  // label 7 at rank 1
        {3, 7, 5},  // label 7 at rank 2
        {3, 5, 7},  // label 7 at rank 3
    };
    const std::vector<std::size_t> labels{7, 7, 7};
    CHECK(precision_at_k(rankings, labels, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(mrr_at_k(rankings, labels, 2) == doctest::Approx((1.0 + 0.5) / 3.0));
    // a label that never appears contributes zero
    CHECK(precision_at_k({{1, 2}}, {9}, 2) == 0.0);
    CHECK(mrr_at_k({{1, 2}}, {9}, 2) == 0.0);
    CHECK_THROWS_AS(precision_at_k({{1}}, {1, 2}, 2), std::invalid_argument);
}

TEST_CASE("empty rank lists are rejected") {
    CHECK_THROWS_AS(evaluate_ranks({}, 20), std::invalid_argument);
}

TEST_CASE("json and table renderings carry the numbers") {
    const EvalResult r = evaluate_ranks({1, 2, 25}, 20);
    const std::string j = eval_result_json(r);
    CHECK(j.find("\"k\":20") != std::string::npos);
    CHECK(j.find("p_at_k") != std::string::npos);
    const std::string t = eval_result_table(r);
    CHECK(t.find("P@20") != std::string::npos);
    CHECK(t.find("MRR@20") != std::string::npos);
}
