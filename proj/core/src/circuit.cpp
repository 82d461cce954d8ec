#include "phantom/circuits/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace phantom::circuits {

std::size_t CircuitGraph::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

model::PatchPlan CircuitGraph::plan() const {
  model::PatchPlan p;
  p.sources.reserve(active.size());
  for (bool a : active) p.sources.push_back(a ? model::EdgeSource::clean : model::EdgeSource::corrupt);
  return p;
}

std::vector<std::size_t> CircuitGraph::ranking() const {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) > std::abs(scores[b]); });
  return order;
}

CircuitGraph build_graph(const model::ModelConfig& config) {
  config.validate();
  CircuitGraph g;
  g.config = config;
  g.topology = Topology(config);
  g.scores.assign(g.topology.edge_count(), 0.0);
  g.active.assign(g.topology.edge_count(), true);
  return g;
}

CircuitGraph prune_threshold(CircuitGraph graph, double tau) {
  if (!graph.scored) throw std::logic_error("prune: graph has no scores");
  if (!(tau >= 0)) throw std::invalid_argument("prune: threshold must be >= 0");
  for (std::size_t e = 0; e < graph.scores.size(); ++e) graph.active[e] = std::abs(graph.scores[e]) >= tau;
  graph.provenance.threshold = tau;
  graph.provenance.top_n.reset();
  graph.provenance.clamped = false;
  return graph;
}

CircuitGraph prune_top_n(CircuitGraph graph, std::size_t n) {
  if (!graph.scored) throw std::logic_error("prune: graph has no scores");
  graph.provenance.clamped = n > graph.edge_count();
  n = std::min(n, graph.edge_count());
  std::fill(graph.active.begin(), graph.active.end(), false);
  const auto order = graph.ranking();
  for (std::size_t i = 0; i < n; ++i) graph.active[order[i]] = true;
  graph.provenance.top_n = n;
  graph.provenance.threshold.reset();
  return graph;
}

std::vector<bool> connected_nodes(const CircuitGraph& graph) {
  const auto& topo = graph.topology;
  std::vector<bool> live(topo.node_count(), false);
  live[static_cast<std::size_t>(topo.logits_node())] = true;
  for (int c = topo.logits_node(); c >= 0; --c) {
    if (!live[static_cast<std::size_t>(c)]) continue;
    for (auto s : topo.slots(c))
      for (auto e : topo.incoming(c, s))
        if (graph.active[e]) live[static_cast<std::size_t>(topo.edges()[e].parent)] = true;
  }
  return live;
}

}  // namespace phantom::circuits
