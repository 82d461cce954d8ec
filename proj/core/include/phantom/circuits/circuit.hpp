#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/nanoformer/forward.hpp"

namespace phantom::circuits {

using model::EdgeInfo;
using model::NodeInfo;
using model::Slot;
using model::Topology;

/// A clean prompt, its corrupted counterpart, and the metric targets:
/// M = logit(y_sub) - logit(y_dom) at the final position.
struct PromptPair {
  model::TokenSeq clean;
  model::TokenSeq corrupt;
  std::int32_t y_sub = 0;
  std::int32_t y_dom = 0;

  model::LogitDiff metric() const { return {y_sub, y_dom}; }
  friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

struct Provenance {
  std::vector<PromptPair> pairs;
  int ig_steps = 0;
  std::optional<double> threshold;
  std::optional<std::size_t> top_n;
  /// A requested top_n exceeded the edge count and was clamped.
  bool clamped = false;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// The residual-stream DAG with per-edge scores and the active (circuit)
/// mask. Inactive edges carry corrupt activations when the circuit runs.
struct CircuitGraph {
  model::ModelConfig config;
  Topology topology;
  std::vector<double> scores;
  bool scored = false;
  std::vector<bool> active;
  Provenance provenance;

  std::size_t edge_count() const noexcept { return topology.edge_count(); }
  std::size_t active_count() const;
  model::PatchPlan plan() const;
  /// Edge ids ordered by |score| descending, ties by edge id.
  std::vector<std::size_t> ranking() const;
};

/// All edges active, scores unset.
CircuitGraph build_graph(const model::ModelConfig& config);

/// Activations for one pair, computed once and reused across circuit runs.
template <typename T>
struct PreparedPair {
  PromptPair pair;
  model::ActivationTrace<T> clean;
  model::ActivationTrace<T> corrupt;
};

/// Throws std::invalid_argument when the prompts differ in length.
template <typename T>
PreparedPair<T> prepare(const model::Model<T>& model, const PromptPair& pair);

/// EAP-IG: S(e) = dA(parent) . mean_k dM/d(child slot input) at
/// alpha_k = k/m along the corrupt->clean embedding path, contracted over
/// all positions (final position only for the logits child), averaged over
/// pairs. Returns the graph with scores set and every edge active.
template <typename T>
CircuitGraph eap_ig_scores(const model::Model<T>& model, const std::vector<PromptPair>& pairs, int ig_steps);

/// Active = edges with |S| >= tau.
CircuitGraph prune_threshold(CircuitGraph graph, double tau);
/// Active = the n highest-|S| edges, ties by edge order; n above the edge
/// count is clamped and flagged.
CircuitGraph prune_top_n(CircuitGraph graph, std::size_t n);

template <typename T>
struct CircuitResult {
  nd::Tensor<T> logits;
  double metric = 0;
};

/// Patched run: active edges carry clean activations, pruned edges corrupt.
/// Throws std::logic_error when the graph has no scores.
template <typename T>
CircuitResult<T> run_circuit(const model::Model<T>& model, const CircuitGraph& graph, const PreparedPair<T>& pair);

template <typename T>
CircuitResult<T> run_circuit(const model::Model<T>& model, const CircuitGraph& graph, const PromptPair& pair);

/// Full-model metric on the clean prompt.
template <typename T>
double full_metric(const PreparedPair<T>& pair);

/// Mean circuit metric over pairs for a given active mask.
template <typename T>
double mean_circuit_metric(const model::Model<T>& model, const CircuitGraph& graph,
                           const std::vector<PreparedPair<T>>& pairs);

/// Nodes reachable backwards from the logits through active edges; nodes
/// outside this set contribute nothing to the output.
std::vector<bool> connected_nodes(const CircuitGraph& graph);

}  // namespace phantom::circuits
