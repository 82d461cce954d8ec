#include <stdexcept>

#include "phantom/circuits/circuit.hpp"

namespace phantom::circuits {

template <typename T>
PreparedPair<T> prepare(const model::Model<T>& model, const PromptPair& pair) {
  if (pair.clean.size() != pair.corrupt.size()) {
    throw std::invalid_argument("prompt pair: clean length " + std::to_string(pair.clean.size()) +
                                " != corrupt length " + std::to_string(pair.corrupt.size()));
  }
  return PreparedPair<T>{pair, model::forward(model, pair.clean), model::forward(model, pair.corrupt)};
}

template <typename T>
CircuitGraph eap_ig_scores(const model::Model<T>& model, const std::vector<PromptPair>& pairs, int ig_steps) {
  if (ig_steps < 1) throw std::invalid_argument("eap_ig_scores: ig_steps must be >= 1");
  if (pairs.empty()) throw std::invalid_argument("eap_ig_scores: no prompt pairs");
  auto graph = build_graph(model.config());
  const auto& topo = graph.topology;
  std::vector<double> total(topo.edge_count(), 0.0);

  for (const auto& pair : pairs) {
    const auto prep = prepare(model, pair);
    const std::size_t seq = prep.clean.seq_len();
    const std::size_t d = static_cast<std::size_t>(model.config().d_model);

    std::vector<std::vector<double>> mean_grad(topo.slot_count(), std::vector<double>(seq * d, 0.0));
    for (int k = 1; k <= ig_steps; ++k) {
      const T alpha = static_cast<T>(static_cast<double>(k) / ig_steps);
      const auto g = model::forward_interpolated(model, prep.clean, prep.corrupt, alpha, topo.embed_node(),
                                                 pair.metric());
      for (std::size_t s = 0; s < topo.slot_count(); ++s)
        for (std::size_t i = 0; i < seq * d; ++i) mean_grad[s][i] += static_cast<double>(g.slot_grads[s][i]);
    }
    for (auto& v : mean_grad)
      for (auto& x : v) x /= ig_steps;

    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
      const auto& edge = topo.edges()[e];
      const auto& a = prep.clean.outputs[static_cast<std::size_t>(edge.parent)];
      const auto& b = prep.corrupt.outputs[static_cast<std::size_t>(edge.parent)];
      const auto& gr = mean_grad[topo.slot_index(edge.child, edge.slot)];
      const std::size_t first = edge.child == topo.logits_node() ? seq - 1 : 0;
      double s = 0;
      for (std::size_t i = first * d; i < seq * d; ++i)
        s += (static_cast<double>(a[i]) - static_cast<double>(b[i])) * gr[i];
      total[e] += s;
    }
    graph.provenance.pairs.push_back(pair);
  }
  for (std::size_t e = 0; e < total.size(); ++e) graph.scores[e] = total[e] / static_cast<double>(pairs.size());
  graph.scored = true;
  graph.provenance.ig_steps = ig_steps;
  return graph;
}

template <typename T>
double full_metric(const PreparedPair<T>& pair) {
  const auto f = pair.clean.final_logits();
  return static_cast<double>(f[static_cast<std::size_t>(pair.pair.y_sub)]) -
         static_cast<double>(f[static_cast<std::size_t>(pair.pair.y_dom)]);
}

template <typename T>
CircuitResult<T> run_circuit(const model::Model<T>& model, const CircuitGraph& graph, const PreparedPair<T>& pair) {
  if (!graph.scored) throw std::logic_error("run_circuit: graph has no scores");
  if (graph.active.size() != model.topology().edge_count()) {
    throw std::invalid_argument("run_circuit: graph has " + std::to_string(graph.active.size()) +
                                " edges, model has " + std::to_string(model.topology().edge_count()));
  }
  auto tr = model::forward_patched(model, pair.clean, pair.corrupt, graph.plan());
  CircuitResult<T> out;
  const auto f = tr.final_logits();
  out.metric = static_cast<double>(f[static_cast<std::size_t>(pair.pair.y_sub)]) -
               static_cast<double>(f[static_cast<std::size_t>(pair.pair.y_dom)]);
  out.logits = std::move(tr.logits);
  return out;
}

template <typename T>
CircuitResult<T> run_circuit(const model::Model<T>& model, const CircuitGraph& graph, const PromptPair& pair) {
  return run_circuit(model, graph, prepare(model, pair));
}

template <typename T>
double mean_circuit_metric(const model::Model<T>& model, const CircuitGraph& graph,
                           const std::vector<PreparedPair<T>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_circuit_metric: no pairs");
  double s = 0;
  for (const auto& p : pairs) s += run_circuit(model, graph, p).metric;
  return s / static_cast<double>(pairs.size());
}

#define PHANTOM_INSTANTIATE_SCORING(T)                                                                           \
  template PreparedPair<T> prepare(const model::Model<T>&, const PromptPair&);                                 \
  template CircuitGraph eap_ig_scores(const model::Model<T>&, const std::vector<PromptPair>&, int);            \
  template double full_metric(const PreparedPair<T>&);                                                         \
  template CircuitResult<T> run_circuit(const model::Model<T>&, const CircuitGraph&, const PreparedPair<T>&);  \
  template CircuitResult<T> run_circuit(const model::Model<T>&, const CircuitGraph&, const PromptPair&);       \
  template double mean_circuit_metric(const model::Model<T>&, const CircuitGraph&,                             \
                                      const std::vector<PreparedPair<T>>&);

PHANTOM_INSTANTIATE_SCORING(float)
PHANTOM_INSTANTIATE_SCORING(double)

#undef PHANTOM_INSTANTIATE_SCORING

}  // namespace phantom::circuits
