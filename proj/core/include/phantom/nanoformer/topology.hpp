#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phantom/nanoformer/config.hpp"

namespace phantom::model {

enum class NodeKind { embed, head, mlp, logits };

/// Residual-stream read slot of a child node.
enum class Slot { q, k, v, in };

std::string to_string(Slot s);
Slot slot_from_string(const std::string& s);

struct NodeInfo {
  NodeKind kind = NodeKind::embed;
  int layer = -1;
  int head = -1;
  /// Position in computation order; strictly increasing along the DAG.
  int order = 0;

  /// "embed", "a{l}.h{j}", "m{l}", "logits"
  std::string name() const;
};

struct EdgeInfo {
  int parent = 0;
  int child = 0;
  Slot slot = Slot::in;
};

/// Node and edge enumeration of the residual-stream DAG for one model
/// shape. Node ids equal computation order: embed, then per layer the heads
/// followed by the MLP, then logits. A child slot reads from every node that
/// has written to the residual stream before it.
class Topology {
 public:
  Topology() = default;
  explicit Topology(const ModelConfig& config);

  const std::vector<NodeInfo>& nodes() const noexcept { return nodes_; }
  const std::vector<EdgeInfo>& edges() const noexcept { return edges_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  int embed_node() const noexcept { return 0; }
  int logits_node() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
  int head_node(int layer, int head) const;
  int mlp_node(int layer) const;
  int n_layers() const noexcept { return n_layers_; }
  int n_heads() const noexcept { return n_heads_; }

  /// Read slots exposed by a node (empty for embed).
  std::span<const Slot> slots(int node) const;
  /// Edge ids entering (child, slot), ordered by parent.
  const std::vector<std::size_t>& incoming(int child, Slot slot) const;
  std::optional<std::size_t> find_edge(int parent, int child, Slot slot) const;
  std::optional<int> find_node(const std::string& name) const;

  /// Index of a head among all heads, layer-major.
  int head_index(int node) const;

  /// Flat index of (child, slot) among all child slots, in edge order.
  std::size_t slot_index(int child, Slot slot) const;
  std::size_t slot_count() const noexcept { return slot_keys_.size(); }
  std::pair<int, Slot> slot_key(std::size_t index) const { return slot_keys_[index]; }

 private:
  int n_layers_ = 0;
  int n_heads_ = 0;
  bool qkv_ = true;
  std::vector<NodeInfo> nodes_;
  std::vector<EdgeInfo> edges_;
  std::vector<std::pair<int, Slot>> slot_keys_;
  std::vector<std::vector<std::size_t>> incoming_;  // by slot index
  std::vector<std::size_t> first_slot_;             // by node
};

/// Which parent activation each edge carries in a patched run.
enum class EdgeSource { clean, corrupt };

struct PatchPlan {
  std::vector<EdgeSource> sources;  // by edge id

  static PatchPlan all(const Topology& topo, EdgeSource s) {
    return PatchPlan{std::vector<EdgeSource>(topo.edge_count(), s)};
  }
  std::size_t corrupt_count() const;
};

}  // namespace phantom::model
