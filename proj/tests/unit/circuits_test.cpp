#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "model_util.hpp"
#include "phantom/circuits/circuit.hpp"
#include "phantom/circuits/circuit_io.hpp"

namespace pc = phantom::circuits;
namespace pm = phantom::model;

namespace {

const pc::PromptPair kPair{{3, 7, 11, 15, 20}, {3, 7, 11, 15, 1}, 25, 9};
const pc::PromptPair kPair2{{4, 8, 12, 16, 21}, {4, 8, 12, 16, 1}, 26, 10};

template <typename T>
pm::Model<T> jittered(int layers = 1, int heads = 2, std::uint64_t seed = 5) {
  pm::Model<T> m(phantom::testing::tiny_config(layers, heads, 16, 32, seed));
  phantom::testing::jitter(m, seed * 31);
  return m;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
  return d;
}

template <typename T>
std::vector<T> flat(const phantom::nd::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

pc::PromptPair swapped(pc::PromptPair p, bool swap_targets) {
  std::swap(p.clean, p.corrupt);
  if (swap_targets) std::swap(p.y_sub, p.y_dom);
  return p;
}

}  // namespace

TEST(CircuitGraph, BuildCountsAndOrdering) {
  for (auto [l, h] : {std::pair{1, 2}, {2, 4}, {3, 2}}) {
    const auto g = pc::build_graph(phantom::testing::tiny_config(l, h));
    EXPECT_EQ(g.topology.node_count(), static_cast<std::size_t>(1 + l * h + l + 1));
    EXPECT_EQ(g.active_count(), g.edge_count());
    EXPECT_FALSE(g.scored);
    std::size_t embed = 0, to_logits = 0;
    for (const auto& e : g.topology.edges()) {
      EXPECT_LT(g.topology.nodes()[e.parent].order, g.topology.nodes()[e.child].order);
      const auto kind = g.topology.nodes()[e.child].kind;
      if (e.slot != pm::Slot::in) {
        EXPECT_EQ(kind, pm::NodeKind::head);
      }
      embed += e.parent == 0;
      to_logits += e.child == g.topology.logits_node();
    }
    EXPECT_EQ(embed, static_cast<std::size_t>(3 * l * h + l + 1));
    EXPECT_EQ(to_logits, g.topology.node_count() - 1);
  }
  EXPECT_EQ(pc::build_graph(phantom::testing::tiny_config(1, 2)).edge_count(), 13u);
}

TEST(CircuitGraph, IdentityAndComplementCircuits32) {
  const auto m = jittered<float>(2, 2);
  const auto g = pc::eap_ig_scores(m, {kPair}, 3);
  const auto prep = pc::prepare(m, kPair);
  const auto full = pc::run_circuit(m, pc::prune_threshold(g, 0.0), prep);
  EXPECT_LE(max_abs_diff(flat(full.logits), flat(prep.clean.logits)), 1e-5);
  EXPECT_NEAR(full.metric, pc::full_metric(prep), 1e-5);
  const auto empty = pc::run_circuit(m, pc::prune_top_n(g, 0), prep);
  EXPECT_LE(max_abs_diff(flat(empty.logits), flat(prep.corrupt.logits)), 1e-5);
}

TEST(CircuitGraph, IdenticalPromptsScoreZero) {
  const auto m = jittered<float>(2, 2);
  pc::PromptPair same = kPair;
  same.corrupt = same.clean;
  const auto g = pc::eap_ig_scores(m, {same}, 5);
  for (double s : g.scores) EXPECT_LE(std::abs(s), 1e-6);
}

TEST(CircuitGraph, SingleStepIsPlainEdgeAttribution) {
  const auto m = jittered<double>(2, 2);
  const auto g = pc::eap_ig_scores(m, {kPair}, 1);
  const auto prep = pc::prepare(m, kPair);
  const auto grad = pm::forward_interpolated(m, prep.clean, prep.corrupt, 1.0, 0, kPair.metric());
  const auto& topo = m.topology();
  const std::size_t n = kPair.clean.size(), d = 16;
  for (std::size_t e = 0; e < topo.edge_count(); ++e) {
    const auto& edge = topo.edges()[e];
    const auto a = prep.clean.outputs[edge.parent].data();
    const auto b = prep.corrupt.outputs[edge.parent].data();
    const auto gr = grad.slot_grads[topo.slot_index(edge.child, edge.slot)].data();
    const std::size_t first = edge.child == topo.logits_node() ? n - 1 : 0;
    double s = 0;
    for (std::size_t i = first * d; i < n * d; ++i) s += (a[i] - b[i]) * gr[i];
    EXPECT_NEAR(g.scores[e], s, 1e-12);
  }
}

TEST(CircuitGraph, PairSwapIdentities64) {
  const auto m = jittered<double>(1, 2);
  const int steps = 25;
  const auto s = pc::eap_ig_scores(m, {kPair}, steps).scores;
  const auto sw = pc::eap_ig_scores(m, {swapped(kPair, false)}, steps).scores;
  const auto full = pc::eap_ig_scores(m, {swapped(kPair, true)}, steps).scores;
  const auto s1 = pc::eap_ig_scores(m, {kPair}, 1).scores;
  const auto sw1 = pc::eap_ig_scores(m, {swapped(kPair, false)}, 1).scores;
  for (std::size_t e = 0; e < s.size(); ++e) {
    EXPECT_NEAR(s[e] + sw[e], (s1[e] + sw1[e]) / steps, 1e-10);
    EXPECT_NEAR(full[e], -sw[e], 1e-12);
  }
}

TEST(CircuitGraph, PairAveragingIsMeanOfPerPairScores) {
  const auto m = jittered<double>(1, 2);
  const auto a = pc::eap_ig_scores(m, {kPair}, 3).scores;
  const auto b = pc::eap_ig_scores(m, {kPair2}, 3).scores;
  const auto g = pc::eap_ig_scores(m, {kPair, kPair2}, 3);
  for (std::size_t e = 0; e < a.size(); ++e) EXPECT_NEAR(g.scores[e], 0.5 * (a[e] + b[e]), 1e-12);
  EXPECT_EQ(g.provenance.pairs.size(), 2u);
  EXPECT_EQ(g.provenance.ig_steps, 3);
}

TEST(CircuitGraph, ErrorsAndPreconditions) {
  const auto m = jittered<float>();
  auto bad = kPair;
  bad.corrupt.pop_back();
  EXPECT_THROW(pc::prepare(m, bad), std::invalid_argument);
  EXPECT_THROW(pc::eap_ig_scores(m, {kPair}, 0), std::invalid_argument);
  EXPECT_THROW(pc::eap_ig_scores(m, {}, 1), std::invalid_argument);
  const auto unscored = pc::build_graph(m.config());
  EXPECT_THROW(pc::run_circuit(m, unscored, kPair), std::logic_error);
  EXPECT_THROW(pc::prune_top_n(unscored, 3), std::logic_error);
  EXPECT_THROW(pc::prune_threshold(unscored, 0.1), std::logic_error);
}

TEST(CircuitGraph, PruningRules) {
  const auto m = jittered<float>(2, 2);
  const auto g = pc::eap_ig_scores(m, {kPair}, 2);
  EXPECT_EQ(pc::prune_threshold(g, 0.0).active_count(), g.edge_count());
  EXPECT_EQ(pc::prune_top_n(g, 0).active_count(), 0u);
  for (std::size_t k = 1; k <= g.edge_count(); ++k) {
    const auto a = pc::prune_top_n(g, k), b = pc::prune_top_n(g, k - 1);
    EXPECT_EQ(a.active_count(), k);
    EXPECT_EQ(a.provenance.top_n, k);
    for (std::size_t e = 0; e < g.edge_count(); ++e)
      if (b.active[e]) EXPECT_TRUE(a.active[e]);
  }
  const auto c = pc::prune_top_n(g, g.edge_count() + 10);
  EXPECT_TRUE(c.provenance.clamped);
  EXPECT_EQ(c.active_count(), g.edge_count());
  const double tau = std::abs(g.scores[g.ranking()[4]]);
  const auto t = pc::prune_threshold(g, tau);
  for (std::size_t e = 0; e < g.edge_count(); ++e) EXPECT_EQ(t.active[e], std::abs(g.scores[e]) >= tau);
  EXPECT_EQ(t.provenance.threshold, tau);
}

TEST(CircuitGraph, ConnectedNodes) {
  auto g = pc::build_graph(phantom::testing::tiny_config(1, 2));
  g.scored = true;
  std::fill(g.active.begin(), g.active.end(), false);
  const auto& topo = g.topology;
  g.active[*topo.find_edge(topo.head_node(0, 1), topo.logits_node(), pm::Slot::in)] = true;
  g.active[*topo.find_edge(0, topo.head_node(0, 0), pm::Slot::q)] = true;
  const auto live = pc::connected_nodes(g);
  EXPECT_TRUE(live[topo.logits_node()]);
  EXPECT_TRUE(live[topo.head_node(0, 1)]);
  EXPECT_FALSE(live[topo.head_node(0, 0)]);
  EXPECT_FALSE(live[0]);
}

TEST(CircuitIo, JsonRoundTripIsExact) {
  const auto m = jittered<float>(2, 2);
  const auto g = pc::prune_top_n(pc::eap_ig_scores(m, {kPair, kPair2}, 2), 7);
  const auto dir = std::filesystem::temp_directory_path() / "phantom_circuit_io";
  std::filesystem::create_directories(dir);
  pc::write_circuit_json(dir / "c.json", g);
  const auto r = pc::read_circuit_json(dir / "c.json");
  EXPECT_EQ(r.scores, g.scores);
  EXPECT_EQ(r.active, g.active);
  EXPECT_EQ(r.provenance, g.provenance);
  EXPECT_EQ(r.config, g.config);
  EXPECT_EQ(pc::to_json(r), pc::to_json(g));
  EXPECT_EQ(pc::pair_from_json(pc::to_json(kPair)), kPair);
  std::filesystem::remove_all(dir);
}

TEST(CircuitIo, DotShowsOnlyActiveEdges) {
  const auto m = jittered<float>(1, 2);
  const auto g = pc::prune_top_n(pc::eap_ig_scores(m, {kPair}, 2), 4);
  const auto dot = pc::to_dot(g);
  EXPECT_EQ(static_cast<std::size_t>(std::count(dot.begin(), dot.end(), '>')), 4u);
  EXPECT_NE(dot.find("digraph"), std::string::npos);
  EXPECT_NE(dot.find("penwidth=5.000"), std::string::npos);
}
