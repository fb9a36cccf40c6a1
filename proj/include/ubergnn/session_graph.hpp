#pragma once

#include <vector>

#include "ubergnn/matrix.hpp"

namespace ubergnn {

// Directed session graph over the unique items of one sequence.
// a_out rows are distributions over successors (edge count / outdegree),
// a_in rows are distributions over predecessors (edge count / indegree).
struct SessionGraph {
    std::vector<std::size_t> nodes;  // unique item indices, first-occurrence order
    Matrix a_out;                    // n x n
    Matrix a_in;                     // n x n
    std::vector<std::size_t> alias;  // sequence position -> node position
    std::size_t last_node = 0;       // node position of the final sequence item

    std::size_t node_count() const { return nodes.size(); }
};

// One edge per consecutive pair, with multiplicity; immediate repeats
// become self-loops.
SessionGraph build_graph(const std::vector<std::size_t>& items);

// [a_out row | a_in row] for one node, length 2n: the propagation stencil.
std::vector<double> gather_concat_rows(const SessionGraph& graph,
                                       std::size_t node_position);

}  // namespace ubergnn
