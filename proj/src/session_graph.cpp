#include "ubergnn/session_graph.hpp"

#include <map>
#include <stdexcept>

namespace ubergnn {

SessionGraph build_graph(const std::vector<std::size_t>& items) {
    if (items.empty()) {
        throw std::invalid_argument("build_graph: empty sequence");
    }
    SessionGraph g;
    std::map<std::size_t, std::size_t> position;
    for (std::size_t item : items) {
        auto it = position.find(item);
        if (it == position.end()) {
            position[item] = g.nodes.size();
            g.alias.push_back(g.nodes.size());
            g.nodes.push_back(item);
        } else {
            g.alias.push_back(it->second);
        }
    }
    const std::size_t n = g.nodes.size();
    Matrix counts(n, n);
    for (std::size_t i = 1; i < items.size(); ++i) {
        counts(g.alias[i - 1], g.alias[i]) += 1.0;
    }
    g.a_out = Matrix(n, n);
    g.a_in = Matrix(n, n);
    for (std::size_t u = 0; u < n; ++u) {
        double outdeg = 0.0, indeg = 0.0;
        for (std::size_t w = 0; w < n; ++w) {
            outdeg += counts(u, w);
            indeg += counts(w, u);
        }
        for (std::size_t w = 0; w < n; ++w) {
            if (outdeg > 0.0) g.a_out(u, w) = counts(u, w) / outdeg;
            if (indeg > 0.0) g.a_in(u, w) = counts(w, u) / indeg;
        }
    }
    g.last_node = g.alias.back();
    return g;
}

std::vector<double> gather_concat_rows(const SessionGraph& graph,
                                       std::size_t node_position) {
    const std::size_t n = graph.node_count();
    if (node_position >= n) {
        throw std::invalid_argument("gather_concat_rows: node position out of range");
    }
    std::vector<double> row(2 * n);
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = graph.a_out(node_position, j);
        row[n + j] = graph.a_in(node_position, j);
    }
    return row;
}

}  // namespace ubergnn
