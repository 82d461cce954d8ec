#pragma once

#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/circuits/circuit.hpp"

namespace phantom::probes {

struct HeadId {
  int layer = 0;
  int head = 0;
  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

/// Mean attention mass from the final query position onto a key span, per
/// head (layer-major), averaged over prompts.
struct AttentionReport {
  std::vector<HeadId> heads;
  std::vector<double> scores;
  std::vector<std::size_t> span;
  std::size_t prompts = 0;

  double score(HeadId h) const;
};

/// Throws std::out_of_range when a span position lies outside a prompt, and
/// std::invalid_argument on an empty prompt set.
template <typename T>
AttentionReport attention_on_span(const model::Model<T>& model, const std::vector<model::TokenSeq>& prompts,
                                  const std::vector<std::size_t>& span);

/// Same aggregation over already-computed traces.
template <typename T>
AttentionReport attention_on_span(const model::Topology& topo, const std::vector<model::ActivationTrace<T>>& traces,
                                  const std::vector<std::size_t>& span);

struct HighAttentionSet {
  std::vector<HeadId> heads;
  double threshold = 0.2;
  std::optional<int> epoch;
};

/// Heads scoring at least `threshold`, ordered by (layer, head).
HighAttentionSet high_attention_heads(const AttentionReport& report, double threshold = 0.2,
                                      std::optional<int> epoch = std::nullopt);

struct LensEntry {
  /// 0 = embedding output, l = after layer l.
  int layer = 0;
  double logit_sub = 0, logit_dom = 0;
  std::size_t rank_sub = 0, rank_dom = 0;
};

struct LogitLensReport {
  std::vector<LensEntry> entries;
  /// Final-position logits of the last entry.
  std::vector<double> final_logits;
  /// First entry at which rank(y_sub) < rank(y_dom), when any.
  std::optional<int> juncture;
  /// The ordering flips strictly after the embedding layer.
  bool crossing = false;
};

/// Projects every post-layer residual (final position) through the final
/// norm and unembedding.
template <typename T>
LogitLensReport logit_lens(const model::Model<T>& model, const model::TokenSeq& prompt, std::int32_t y_sub,
                           std::int32_t y_dom);

struct Neighbor {
  int node = 0;
  model::Slot slot = model::Slot::in;
  double score = 0;
  std::size_t edge = 0;
};

struct Structure {
  std::vector<Neighbor> parents;
  std::vector<Neighbor> children;
};

/// Active-edge neighbours of a node ordered by |score| descending (ties by
/// edge id). Throws std::out_of_range for an unknown node.
Structure trace_structure(const circuits::CircuitGraph& graph, int node);

/// Heads touched by at least one active edge, ordered by (layer, head).
std::vector<HeadId> circuit_heads(const circuits::CircuitGraph& graph);

/// Graph with every active edge into or out of the given heads deactivated.
circuits::CircuitGraph ablate_mask(const circuits::CircuitGraph& graph, const std::vector<HeadId>& heads);

struct AblationResult {
  double proportion = 0;
  std::vector<HeadId> ablated;
  double metric_before = 0, metric_after = 0;
  double attention_before = 0, attention_after = 0;
  /// Positive = worse.
  double delta_metric = 0;
  double delta_attention = 0;
};

/// Mean attention from the final position onto `span` over the given heads
/// in patched runs of the circuit.
template <typename T>
double circuit_attention(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                         const std::vector<circuits::PreparedPair<T>>& pairs, const std::vector<HeadId>& heads,
                         const std::vector<std::size_t>& span);

/// Ablates the top ceil(p * |circuit heads|) heads ranked by `ranking`
/// (attention on the subordinate span, descending; ties by (layer, head)),
/// forcing their active edges to corrupt. Throws std::invalid_argument for
/// p outside (0, 1] or a circuit without heads.
template <typename T>
AblationResult ablate_heads(const model::Model<T>& model, const circuits::CircuitGraph& graph,
                            const std::vector<circuits::PreparedPair<T>>& pairs, const AttentionReport& ranking,
                            double proportion, const std::vector<std::size_t>& span);

nlohmann::json to_json(const AttentionReport& r);
nlohmann::json to_json(const HighAttentionSet& s);
nlohmann::json to_json(const LogitLensReport& r);
nlohmann::json to_json(const Structure& s, const model::Topology& topo);
nlohmann::json to_json(const AblationResult& r);

inline constexpr const char* kAttentionCsvHeader = "epoch,layer,head,score_on_xsub,score_on_xdom";
void write_attention_rows(std::ostream& os, int epoch, const AttentionReport& on_sub, const AttentionReport& on_dom);

}  // namespace phantom::probes
