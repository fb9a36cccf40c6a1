#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ubergnn/data.hpp"
#include "ubergnn/model.hpp"
#include "ubergnn/session_graph.hpp"

namespace ubergnn {

// Small full model (d=4, M=3, f=2, two DNN layers of width 5, vocabulary 6,
// session length 4, T=2, V4) used for end-to-end gradient verification.
struct MicroFixture {
    Model model;
    SessionGraph graph;
    UserFeatureVector x;
    std::size_t label = 0;
    UserFeatureSchema schema;
};

MicroFixture make_micro_fixture(std::uint64_t seed = 7);

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
};

// Analytic gradients against central finite differences, one report per
// parameter group.
std::vector<GradCheckReport> run_grad_check(MicroFixture& fx, double eps = 1e-5);

}  // namespace ubergnn
