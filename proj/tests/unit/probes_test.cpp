#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "model_util.hpp"
#include "phantom/probes/probes.hpp"

namespace pc = phantom::circuits;
namespace pm = phantom::model;
namespace pp = phantom::probes;

namespace {

const pc::PromptPair kPair{{3, 7, 11, 15, 20}, {3, 7, 11, 15, 1}, 25, 9};
const pc::PromptPair kPair2{{4, 8, 12, 16, 21}, {4, 8, 12, 16, 1}, 26, 10};
const std::vector<std::size_t> kSub{4};

template <typename T>
pm::Model<T> jittered(int layers = 2, int heads = 2, std::uint64_t seed = 5) {
  pm::Model<T> m(phantom::testing::tiny_config(layers, heads, 16, 32, seed));
  phantom::testing::jitter(m, seed * 31);
  return m;
}

template <typename T>
void zero_param(pm::Model<T>& m, const std::string& name) {
  const auto& names = m.param_names();
  const auto it = std::find(names.begin(), names.end(), name);
  ASSERT_NE(it, names.end()) << name;
  for (auto& x : m.params()[static_cast<std::size_t>(it - names.begin())].data()) x = 0;
}

std::vector<pm::TokenSeq> prompts(std::size_t n) {
  std::vector<pm::TokenSeq> out;
  for (std::size_t i = 0; i < n; ++i) {
    pm::TokenSeq p;
    for (std::size_t j = 0; j < 5; ++j) p.push_back(static_cast<std::int32_t>(2 + (7 * i + 3 * j) % 30));
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(Attention, UniformHeadScoresOneFifth) {
  auto m = jittered<double>(1, 2);
  for (const char* p : {"l0.h0.wq", "l0.h0.bq", "l0.h0.wk", "l0.h0.bk"}) zero_param(m, p);
  const auto r = pp::attention_on_span(m, prompts(3), kSub);
  EXPECT_NEAR(r.score({0, 0}), 0.2, 1e-12);
  EXPECT_EQ(r.prompts, 3u);
}

TEST(Attention, SpanPlusOffSpanIsOne) {
  const auto m = jittered<float>();
  const auto on = pp::attention_on_span(m, prompts(4), kSub);
  const auto off = pp::attention_on_span(m, prompts(4), {0, 1, 2, 3});
  const auto all = pp::attention_on_span(m, prompts(4), {0, 1, 2, 3, 4});
  for (std::size_t i = 0; i < on.heads.size(); ++i) {
    EXPECT_GE(on.scores[i], 0.0);
    EXPECT_LE(on.scores[i], 1.0);
    EXPECT_NEAR(on.scores[i] + off.scores[i], 1.0, 1e-6);
    EXPECT_NEAR(all.scores[i], 1.0, 1e-6);
  }
}

TEST(Attention, AverageIsMeanOfPerPromptReports) {
  const auto m = jittered<double>();
  const auto ps = prompts(100);
  const auto r = pp::attention_on_span(m, ps, kSub);
  std::vector<double> mean(r.heads.size(), 0.0);
  for (const auto& p : ps) {
    const auto one = pp::attention_on_span(m, std::vector<pm::TokenSeq>{p}, kSub);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += one.scores[i] / 100.0;
  }
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(r.scores[i], mean[i], 1e-12);
}

TEST(Attention, Errors) {
  const auto m = jittered<float>();
  EXPECT_THROW(pp::attention_on_span(m, prompts(2), {5}), std::out_of_range);
  EXPECT_THROW(pp::attention_on_span(m, std::vector<pm::TokenSeq>{}, kSub), std::invalid_argument);
  const auto r = pp::attention_on_span(m, prompts(2), kSub);
  EXPECT_THROW(r.score({7, 0}), std::out_of_range);
}

TEST(Attention, HighAttentionSet) {
  pp::AttentionReport r;
  r.heads = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  r.scores = {0.5, 0.1, 0.2, 0.9};
  EXPECT_EQ(pp::high_attention_heads(r, 0.0).heads.size(), 4u);
  EXPECT_TRUE(pp::high_attention_heads(r, 1.01).heads.empty());
  const auto s = pp::high_attention_heads(r, 0.2, 7);
  EXPECT_EQ(s.heads, (std::vector<pp::HeadId>{{0, 0}, {1, 0}, {1, 1}}));
  EXPECT_EQ(s.epoch, 7);
  EXPECT_EQ(s.threshold, 0.2);
}

TEST(Attention, CsvRows) {
  pp::AttentionReport a, b;
  a.heads = b.heads = {{0, 0}, {0, 1}};
  a.scores = {0.25, 0.5};
  b.scores = {0.125, 0.0};
  std::ostringstream os;
  pp::write_attention_rows(os, 3, a, b);
  EXPECT_EQ(os.str(), "3,0,0,0.25,0.125\n3,0,1,0.5,0\n");
}

TEST(LogitLens, LastEntryEqualsFinalLogits) {
  for (int layers : {0, 1, 3}) {
    const auto m = jittered<float>(layers, 2);
    const auto lens = pp::logit_lens(m, kPair.clean, kPair.y_sub, kPair.y_dom);
    ASSERT_EQ(lens.entries.size(), static_cast<std::size_t>(layers + 1));
    const auto tr = pm::forward(m, kPair.clean);
    const auto f = tr.final_logits();
    ASSERT_EQ(lens.final_logits.size(), f.size());
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(lens.final_logits[i], f[i], 1e-5);
    const auto& last = lens.entries.back();
    EXPECT_NEAR(last.logit_sub, f[kPair.y_sub], 1e-5);
    EXPECT_EQ(last.rank_sub, pm::rank_of<float>(f, kPair.y_sub));
    for (const auto& e : lens.entries) {
      EXPECT_LT(e.rank_sub, 32u);
      EXPECT_LT(e.rank_dom, 32u);
    }
  }
  const auto m = jittered<float>();
  EXPECT_THROW(pp::logit_lens(m, kPair.clean, 32, 1), std::out_of_range);
}

TEST(LogitLens, JunctureIsFirstSubordinateLead) {
  const auto m = jittered<double>(3, 2);
  const auto lens = pp::logit_lens(m, kPair.clean, kPair.y_sub, kPair.y_dom);
  for (const auto& e : lens.entries) {
    if (lens.juncture && e.layer < *lens.juncture) EXPECT_GE(e.rank_sub, e.rank_dom);
    if (lens.juncture && e.layer == *lens.juncture) EXPECT_LT(e.rank_sub, e.rank_dom);
  }
  const auto swapped = pp::logit_lens(m, kPair.clean, kPair.y_dom, kPair.y_sub);
  EXPECT_TRUE(lens.juncture || swapped.juncture);
}

TEST(Structure, SourcesSinksAndHandBuiltGraph) {
  auto g = pc::build_graph(phantom::testing::tiny_config(1, 2));
  const auto& topo = g.topology;
  g.scored = true;
  std::fill(g.active.begin(), g.active.end(), false);
  const auto h0 = topo.head_node(0, 0), h1 = topo.head_node(0, 1), lg = topo.logits_node();
  const auto e1 = *topo.find_edge(0, h0, pm::Slot::v);
  const auto e2 = *topo.find_edge(h0, lg, pm::Slot::in);
  const auto e3 = *topo.find_edge(h1, lg, pm::Slot::in);
  for (auto [e, s] : {std::pair{e1, 0.5}, {e2, -2.0}, {e3, 1.0}}) {
    g.active[e] = true;
    g.scores[e] = s;
  }
  EXPECT_TRUE(pp::trace_structure(g, lg).children.empty());
  EXPECT_TRUE(pp::trace_structure(g, 0).parents.empty());
  const auto at_logits = pp::trace_structure(g, lg);
  ASSERT_EQ(at_logits.parents.size(), 2u);
  EXPECT_EQ(at_logits.parents[0].node, h0);
  EXPECT_EQ(at_logits.parents[0].score, -2.0);
  EXPECT_EQ(at_logits.parents[1].node, h1);
  const auto at_h0 = pp::trace_structure(g, h0);
  ASSERT_EQ(at_h0.parents.size(), 1u);
  EXPECT_EQ(at_h0.parents[0].slot, pm::Slot::v);
  ASSERT_EQ(at_h0.children.size(), 1u);
  EXPECT_EQ(at_h0.children[0].edge, e2);
  EXPECT_THROW(pp::trace_structure(g, 99), std::out_of_range);
  EXPECT_EQ(pp::circuit_heads(g), (std::vector<pp::HeadId>{{0, 0}, {0, 1}}));
}

TEST(Ablation, CeilingRuleNestingAndPurity) {
  const auto m = jittered<double>(2, 2);
  std::vector<pc::PreparedPair<double>> pairs{pc::prepare(m, kPair), pc::prepare(m, kPair2)};
  const auto g = pc::prune_top_n(pc::eap_ig_scores(m, {kPair, kPair2}, 3), 20);
  const auto heads = pp::circuit_heads(g);
  ASSERT_FALSE(heads.empty());
  const auto ranking = pp::attention_on_span(m, std::vector<pm::TokenSeq>{kPair.clean, kPair2.clean}, kSub);
  const auto a = pp::ablate_heads(m, g, pairs, ranking, 0.01, kSub);
  EXPECT_EQ(a.ablated.size(), 1u);
  std::vector<pp::HeadId> prev;
  for (double p : {0.1, 0.2, 0.5, 1.0}) {
    const auto r = pp::ablate_heads(m, g, pairs, ranking, p, kSub);
    EXPECT_EQ(r.ablated.size(), static_cast<std::size_t>(std::ceil(p * heads.size() - 1e-9)));
    for (const auto& h : prev) EXPECT_TRUE(std::find(r.ablated.begin(), r.ablated.end(), h) != r.ablated.end());
    for (const auto& h : r.ablated) EXPECT_TRUE(std::find(heads.begin(), heads.end(), h) != heads.end());
    EXPECT_NEAR(r.delta_metric, r.metric_before - r.metric_after, 1e-12);
    EXPECT_NEAR(r.metric_before, pc::mean_circuit_metric(m, g, pairs), 1e-12);
    prev = r.ablated;
  }
  const auto masked = pp::ablate_mask(g, prev);
  EXPECT_EQ(pp::circuit_heads(masked).size(), 0u);
  EXPECT_EQ(pc::mean_circuit_metric(m, pp::ablate_mask(g, {}), pairs), pc::mean_circuit_metric(m, g, pairs));
  const auto again = pp::ablate_heads(m, g, pairs, ranking, 0.5, kSub);
  const auto once = pp::ablate_heads(m, g, pairs, ranking, 0.5, kSub);
  EXPECT_EQ(again.metric_after, once.metric_after);
  EXPECT_EQ(again.attention_after, once.attention_after);
}

TEST(Ablation, Errors) {
  const auto m = jittered<double>(1, 2);
  std::vector<pc::PreparedPair<double>> pairs{pc::prepare(m, kPair)};
  const auto g = pc::eap_ig_scores(m, {kPair}, 2);
  const auto ranking = pp::attention_on_span(m, std::vector<pm::TokenSeq>{kPair.clean}, kSub);
  EXPECT_THROW(pp::ablate_heads(m, g, pairs, ranking, 0.0, kSub), std::invalid_argument);
  EXPECT_THROW(pp::ablate_heads(m, g, pairs, ranking, 1.5, kSub), std::invalid_argument);
  auto mlp_only = pc::prune_top_n(g, 0);
  mlp_only.active[*g.topology.find_edge(g.topology.mlp_node(0), g.topology.logits_node(), pm::Slot::in)] = true;
  EXPECT_THROW(pp::ablate_heads(m, mlp_only, pairs, ranking, 0.5, kSub), std::invalid_argument);
}
