#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "phantom/nanoformer/forward.hpp"
#include "phantom/ndtensor/ops.hpp"
#include "numerics_fixtures.hpp"

namespace pm = phantom::model;
namespace nd = phantom::nd;

namespace {

pm::ModelConfig small_config(int layers = 2, int heads = 4, int d = 32, int vocab = 40, std::uint64_t seed = 3) {
  pm::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = d;
  c.d_mlp = 2 * d;
  c.vocab_size = vocab;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

/// Scales every weight up so the tiny model has non-trivial attention and
/// logit structure.
template <typename T>
void perturb(pm::Model<T>& m, std::uint64_t seed, double scale = 0.5) {
  std::uint64_t s = seed;
  for (auto& p : m.params()) {
    auto r = phantom::testing::random_tensor<T>(p.shape(), ++s, T(-scale), T(scale));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += r[i];
  }
}

template <typename T>
T metric_of(const pm::ActivationTrace<T>& tr, pm::LogitDiff m) {
  const auto f = tr.final_logits();
  return f[static_cast<std::size_t>(m.positive)] - f[static_cast<std::size_t>(m.negative)];
}

const pm::TokenSeq kClean{5, 9, 13, 17, 22};
const pm::TokenSeq kCorrupt{5, 9, 13, 17, 1};

}  // namespace

TEST(ModelConfig, DHeadAndValidation) {
  auto c = pm::preset("S", 512, 0);
  EXPECT_EQ(c.n_layers, 2);
  EXPECT_EQ(c.n_heads, 4);
  EXPECT_EQ(c.d_model, 64);
  EXPECT_EQ(c.d_head(), 16);
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.n_heads = 4;
  c.vocab_size = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(pm::preset("XL", 512, 0), std::invalid_argument);
  EXPECT_EQ(pm::preset("M", 512, 0).d_model, 128);
  EXPECT_EQ(pm::preset("L", 512, 0).n_heads, 8);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = small_config();
  c.precision = nd::Precision::f64;
  c.qkv_slots = false;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<pm::ModelConfig>(), c);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (auto c : {small_config(), small_config(0, 2, 8), pm::preset("M", 640, 1)}) {
    pm::Model<float> m(c);
    EXPECT_EQ(m.parameter_count(), c.parameter_count());
    EXPECT_EQ(m.params().size(), m.param_names().size());
  }
}

TEST(Model, SameSeedBitIdentical) {
  pm::Model<float> a(small_config()), b(small_config());
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_TRUE(a.params()[i] == b.params()[i]);
  pm::Model<float> c(small_config(2, 4, 32, 40, 4));
  EXPECT_FALSE(a.params()[0] == c.params()[0]);
}

TEST(Model, InitStatistics) {
  auto cfg = small_config(2, 4, 64, 512);
  pm::Model<double> m(cfg);
  auto stdev = [](const nd::Tensor<double>& t) {
    double s = 0;
    for (auto x : t.data()) s += x * x;
    return std::sqrt(s / static_cast<double>(t.size()));
  };
  EXPECT_NEAR(stdev(m.param(m.layout().tok_emb)), 0.02, 0.002);
  EXPECT_NEAR(stdev(m.param(m.layout().layers[0].w2)), 0.02 / std::sqrt(4.0), 0.002);
  for (auto x : m.param(m.layout().layers[0].ln1_g).data()) EXPECT_EQ(x, 1.0);
}

TEST(Model, ZeroUnembeddingGivesUniformLogits) {
  pm::Model<float> m(small_config());
  m.zero_unembedding();
  auto tr = pm::forward(m, kClean);
  for (auto x : tr.logits.data()) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(pm::argmax<float>(tr.final_logits()), 0);
}

TEST(Topology, OneLayerTwoHeadsHasFiveNodesThirteenEdges) {
  pm::Topology t(small_config(1, 2, 8));
  EXPECT_EQ(t.node_count(), 5u);
  EXPECT_EQ(t.edge_count(), 13u);
  for (const auto& e : t.edges()) EXPECT_LT(e.parent, e.child);
  EXPECT_EQ(t.nodes()[1].name(), "a0.h0");
  EXPECT_EQ(t.nodes()[3].name(), "m0");
  EXPECT_EQ(t.find_node("logits"), 4);
  EXPECT_TRUE(t.find_edge(1, 3, pm::Slot::in).has_value());
  EXPECT_FALSE(t.find_edge(1, 2, pm::Slot::q).has_value());
  EXPECT_FALSE(t.find_edge(0, 3, pm::Slot::q).has_value());
}

TEST(Topology, EdgeCountFormulaAcrossShapes) {
  for (int L = 0; L <= 3; ++L) {
    for (int H = 1; H <= 3; ++H) {
      pm::Topology t(small_config(L, H, 6 * H));
      std::size_t expect = 0;
      for (int l = 0; l < L; ++l) {
        const std::size_t upstream = 1 + static_cast<std::size_t>(l * (H + 1));
        expect += static_cast<std::size_t>(3 * H) * upstream + upstream + static_cast<std::size_t>(H);
      }
      expect += static_cast<std::size_t>(L * (H + 1)) + 1;
      EXPECT_EQ(t.edge_count(), expect) << "L=" << L << " H=" << H;
      EXPECT_EQ(t.node_count(), static_cast<std::size_t>(2 + L * (H + 1)));
    }
  }
}

TEST(Forward, DeterministicAndShaped) {
  pm::Model<float> m(small_config());
  perturb(m, 1);
  auto a = pm::forward(m, kClean), b = pm::forward(m, kClean);
  EXPECT_TRUE(a.logits == b.logits);
  EXPECT_EQ(a.logits.shape(), (nd::Shape{5, 40}));
  EXPECT_EQ(a.outputs.size(), m.topology().node_count() - 1);
  EXPECT_EQ(a.residual.size(), 3u);
}

TEST(Forward, RejectsBadTokensAndLength) {
  pm::Model<float> m(small_config());
  EXPECT_THROW(pm::forward(m, pm::TokenSeq{1, 40}), std::out_of_range);
  EXPECT_THROW(pm::forward(m, pm::TokenSeq{1, -1}), std::out_of_range);
  EXPECT_THROW(pm::forward(m, pm::TokenSeq(9, 2)), std::invalid_argument);
  EXPECT_THROW(pm::forward(m, pm::TokenSeq{}), std::invalid_argument);
}

TEST(Forward, ResidualReconstruction) {
  pm::Model<float> m(small_config());
  perturb(m, 2);
  auto tr = pm::forward(m, kClean);
  const auto& topo = m.topology();
  nd::Tensor<float> acc = tr.outputs[0];
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 4; ++h) {
      const auto& o = tr.outputs[static_cast<std::size_t>(topo.head_node(l, h))];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += o[i];
    }
    const auto& o = tr.outputs[static_cast<std::size_t>(topo.mlp_node(l))];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += o[i];
    EXPECT_LT(nd::max_abs_diff(acc, tr.residual[static_cast<std::size_t>(l + 1)]), 1e-4);
  }
}

TEST(Forward, AttentionRowStochasticAndCausal) {
  pm::Model<float> m(small_config());
  perturb(m, 3);
  auto tr = pm::forward(m, kClean);
  ASSERT_EQ(tr.attention.size(), 8u);
  for (const auto& a : tr.attention) {
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        if (c > r) EXPECT_EQ(a.at(r, c), 0.0f);
        EXPECT_GE(a.at(r, c), 0.0f);
        s += a.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Forward, Causality) {
  pm::Model<float> m(small_config());
  perturb(m, 4);
  auto a = pm::forward(m, kClean);
  for (std::size_t t = 0; t < kClean.size(); ++t) {
    auto toks = kClean;
    toks[t] = (toks[t] + 7) % 40;
    auto b = pm::forward(m, toks);
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t c = 0; c < 40; ++c) EXPECT_EQ(a.logits.at(r, c), b.logits.at(r, c));
    double diff = 0;
    for (std::size_t c = 0; c < 40; ++c) diff += std::abs(a.logits.at(t, c) - b.logits.at(t, c));
    EXPECT_GT(diff, 0.0);
  }
}

TEST(Forward, BatchFinalLogitsMatchSingle) {
  pm::Model<float> m(small_config());
  perturb(m, 5);
  std::vector<std::int32_t> batch(kClean.begin(), kClean.end());
  batch.insert(batch.end(), kCorrupt.begin(), kCorrupt.end());
  auto bl = pm::batch_final_logits(m, batch, 2, 5);
  auto a = pm::forward(m, kClean).final_logits();
  auto b = pm::forward(m, kCorrupt).final_logits();
  for (std::size_t c = 0; c < 40; ++c) {
    EXPECT_NEAR(bl.at(0, c), a[c], 1e-5);
    EXPECT_NEAR(bl.at(1, c), b[c], 1e-5);
  }
}

TEST(Forward, ArgmaxAndRankTies) {
  std::vector<float> l{1.0f, 3.0f, 3.0f, 2.0f};
  EXPECT_EQ(pm::argmax<float>(l), 1);
  EXPECT_EQ(pm::rank_of<float>(l, 1), 0u);
  EXPECT_EQ(pm::rank_of<float>(l, 2), 1u);
  EXPECT_EQ(pm::rank_of<float>(l, 3), 2u);
  EXPECT_EQ(pm::rank_of<float>(l, 0), 3u);
}

TEST(Patched, AllCleanAndAllCorruptIdentities) {
  for (bool qkv : {true, false}) {
    auto cfg = small_config();
    cfg.qkv_slots = qkv;
    pm::Model<float> m(cfg);
    perturb(m, 6);
    auto clean = pm::forward(m, kClean), corrupt = pm::forward(m, kCorrupt);
    const auto& topo = m.topology();
    auto pc = pm::forward_patched(m, clean, corrupt, pm::PatchPlan::all(topo, pm::EdgeSource::clean));
    auto px = pm::forward_patched(m, clean, corrupt, pm::PatchPlan::all(topo, pm::EdgeSource::corrupt));
    EXPECT_LE(nd::max_abs_diff(pc.logits, clean.logits), 1e-5);
    EXPECT_LE(nd::max_abs_diff(px.logits, corrupt.logits), 1e-5);
    for (std::size_t i = 0; i < clean.attention.size(); ++i)
      EXPECT_LE(nd::max_abs_diff(pc.attention[i], clean.attention[i]), 1e-6);
  }
}

TEST(Patched, RejectsMismatch) {
  pm::Model<float> m(small_config());
  auto clean = pm::forward(m, kClean);
  auto shorter = pm::forward(m, pm::TokenSeq{1, 2, 3});
  auto plan = pm::PatchPlan::all(m.topology(), pm::EdgeSource::clean);
  EXPECT_THROW(pm::forward_patched(m, clean, shorter, plan), std::invalid_argument);
  plan.sources.pop_back();
  EXPECT_THROW(pm::forward_patched(m, clean, clean, plan), std::invalid_argument);
  pm::Model<float> other(small_config(1, 2, 8));
  auto foreign = pm::forward(other, kCorrupt);
  EXPECT_THROW(pm::forward_patched(m, clean, foreign, pm::PatchPlan::all(m.topology(), pm::EdgeSource::clean)),
               std::invalid_argument);
}

namespace {

/// Direct recomputation of a 1-layer model with each slot input written out
/// by hand: q/k/v/in inputs are sums of chosen parent contributions.
struct OneLayerOracle {
  const pm::Model<double>& m;
  nd::Tape<double> tape;

  nd::Var<double> p(std::size_t i) { return tape.constant(m.param(i)); }

  nd::Var<double> head(int h, const nd::Tensor<double>& xq, const nd::Tensor<double>& xk,
                       const nd::Tensor<double>& xv) {
    const auto& lp = m.layout().layers[0];
    const auto& hp = lp.heads[static_cast<std::size_t>(h)];
    const std::size_t S = xq.dim(0), dh = static_cast<std::size_t>(m.config().d_head());
    auto proj = [&](const nd::Tensor<double>& x, std::size_t w, std::size_t b) {
      auto n = nd::layer_norm(tape.constant(x), p(lp.ln1_g), p(lp.ln1_b));
      return nd::add_bias(nd::matmul(n, p(w)), p(b));
    };
    auto q = proj(xq, hp.wq, hp.bq), k = proj(xk, hp.wk, hp.bk), v = proj(xv, hp.wv, hp.bv);
    auto sc = nd::scale(nd::matmul(q, nd::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto a = nd::softmax(nd::causal_mask(nd::reshape(sc, {1, S, S})));
    auto z = nd::matmul(nd::reshape(a, {S, S}), v);
    return nd::matmul(z, p(hp.wo));
  }

  nd::Var<double> mlp(const nd::Tensor<double>& x) {
    const auto& lp = m.layout().layers[0];
    auto n = nd::layer_norm(tape.constant(x), p(lp.ln2_g), p(lp.ln2_b));
    auto h = nd::gelu(nd::add_bias(nd::matmul(n, p(lp.w1)), p(lp.b1)));
    return nd::add_bias(nd::matmul(h, p(lp.w2)), p(lp.b2));
  }

  nd::Tensor<double> logits(const nd::Tensor<double>& x) {
    const auto& lay = m.layout();
    auto n = nd::layer_norm(tape.constant(x), p(lay.lnf_g), p(lay.lnf_b));
    return nd::add_bias(nd::matmul(n, p(lay.w_u)), p(lay.b_u)).value();
  }
};

nd::Tensor<double> plus(nd::Tensor<double> a, const nd::Tensor<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

TEST(Patched, SingleEdgeMatchesHandAssembledOracle) {
  pm::Model<double> m(small_config(1, 2, 8, 24, 11));
  perturb(m, 7);
  const pm::TokenSeq clean_t{3, 4, 5, 6, 7}, corrupt_t{3, 4, 5, 6, 1};
  auto clean = pm::forward(m, clean_t), corrupt = pm::forward(m, corrupt_t);
  const auto& topo = m.topology();
  ASSERT_EQ(topo.edge_count(), 13u);

  for (std::size_t e = 0; e < topo.edge_count(); ++e) {
    auto plan = pm::PatchPlan::all(topo, pm::EdgeSource::clean);
    plan.sources[e] = pm::EdgeSource::corrupt;
    auto got = pm::forward_patched(m, clean, corrupt, plan);

    const auto& edge = topo.edges()[e];
    auto src = [&](int parent, int child, pm::Slot slot, const nd::Tensor<double>& live) -> nd::Tensor<double> {
      const bool hit = edge.parent == parent && edge.child == child && edge.slot == slot;
      return hit ? corrupt.outputs[static_cast<std::size_t>(parent)] : live;
    };
    OneLayerOracle o{m, {}};
    const auto& E = clean.outputs[0];
    nd::Tensor<double> H[2];
    for (int h = 0; h < 2; ++h) {
      const int n = 1 + h;
      H[h] = o.head(h, src(0, n, pm::Slot::q, E), src(0, n, pm::Slot::k, E), src(0, n, pm::Slot::v, E)).value();
    }
    auto mlp_in = plus(plus(src(0, 3, pm::Slot::in, E), src(1, 3, pm::Slot::in, H[0])), src(2, 3, pm::Slot::in, H[1]));
    auto M = o.mlp(mlp_in).value();
    auto lin = plus(plus(plus(src(0, 4, pm::Slot::in, E), src(1, 4, pm::Slot::in, H[0])),
                         src(2, 4, pm::Slot::in, H[1])),
                    src(3, 4, pm::Slot::in, M));
    auto expect = o.logits(lin);
    EXPECT_LE(nd::max_abs_diff(got.logits, expect), 1e-10) << "edge " << e;
    EXPECT_GT(nd::max_abs_diff(got.logits, clean.logits), 0.0) << "edge " << e;
  }
}

TEST(Interpolated, AlphaValidation) {
  pm::Model<double> m(small_config());
  auto clean = pm::forward(m, kClean), corrupt = pm::forward(m, kCorrupt);
  EXPECT_THROW(pm::forward_interpolated(m, clean, corrupt, 1.5, 0, {22, 17}), std::invalid_argument);
  EXPECT_THROW(pm::forward_interpolated(m, clean, corrupt, -0.1, 0, {22, 17}), std::invalid_argument);
  EXPECT_THROW(pm::forward_interpolated(m, clean, corrupt, 0.5, m.topology().logits_node(), {22, 17}),
               std::out_of_range);
}

TEST(Interpolated, AlphaOneIsCleanGradientAndIdenticalTracesAreFlat) {
  pm::Model<double> m(small_config());
  perturb(m, 8);
  auto clean = pm::forward(m, kClean), corrupt = pm::forward(m, kCorrupt);
  const pm::LogitDiff md{22, 17};
  auto at1 = pm::forward_interpolated(m, clean, corrupt, 1.0, 0, md);
  EXPECT_NEAR(at1.metric, metric_of(clean, md), 1e-10);
  for (double a : {0.0, 0.3, 1.0}) {
    auto same = pm::forward_interpolated(m, clean, clean, a, 0, md);
    EXPECT_LE(nd::max_abs_diff(same.node_grad, at1.node_grad), 1e-12);
    for (std::size_t s = 0; s < same.slot_grads.size(); ++s)
      EXPECT_LE(nd::max_abs_diff(same.slot_grads[s], at1.slot_grads[s]), 1e-12);
  }
  auto at0 = pm::forward_interpolated(m, clean, corrupt, 0.0, 0, md);
  EXPECT_NEAR(at0.metric, metric_of(corrupt, md), 1e-10);
}

TEST(Interpolated, EmbedGradientIsSumOfSlotGradients) {
  pm::Model<double> m(small_config());
  perturb(m, 9);
  auto clean = pm::forward(m, kClean), corrupt = pm::forward(m, kCorrupt);
  auto g = pm::forward_interpolated(m, clean, corrupt, 0.4, 0, {22, 17});
  nd::Tensor<double> acc(g.node_grad.shape());
  for (const auto& s : g.slot_grads) acc = plus(acc, s);
  EXPECT_LE(nd::max_abs_diff(acc, g.node_grad), 1e-12);
}

TEST(Interpolated, GradientMatchesFiniteDifference) {
  pm::Model<double> m(small_config());
  perturb(m, 10);
  auto clean = pm::forward(m, kClean), base = pm::forward(m, kCorrupt);
  const pm::LogitDiff md{22, 17};
  const auto& topo = m.topology();
  const double h = 1e-3;
  for (int node : {0, topo.head_node(0, 1), topo.mlp_node(0), topo.head_node(1, 3), topo.mlp_node(1)}) {
    for (std::uint64_t dir = 0; dir < 4; ++dir) {
      // Corrupt activation = clean + random direction, so dM/dalpha at alpha
      // equals -grad . direction evaluated at the interpolated point.
      auto corrupt = base;
      const auto& a = clean.outputs[static_cast<std::size_t>(node)];
      auto d = phantom::testing::random_tensor<double>(a.shape(), 100 + dir, -1.0, 1.0);
      corrupt.outputs[static_cast<std::size_t>(node)] = plus(a, d);
      const double alpha = 0.5;
      auto g = pm::forward_interpolated(m, clean, corrupt, alpha, node, md);
      double analytic = 0;
      for (std::size_t i = 0; i < d.size(); ++i) analytic -= g.node_grad[i] * d[i];
      auto f = [&](double x) { return pm::forward_interpolated(m, clean, corrupt, x, node, md).metric; };
      const double d1 = (f(alpha + h) - f(alpha - h)) / (2 * h);
      const double d2 = (f(alpha + h / 2) - f(alpha - h / 2)) / h;
      const double fd = (4 * d2 - d1) / 3;
      EXPECT_LT(std::abs(analytic - fd) / (std::abs(fd) + 1e-8), 1e-5) << "node " << node << " dir " << dir;
    }
  }
}

TEST(Training, TinyTransformerLossGradCheck64) {
  EXPECT_LT(phantom::testing::transformer_grad_check_64(), 1e-6);
}

TEST(Training, TinyTransformerLossGradCheck32) {
  EXPECT_LT(phantom::testing::transformer_grad_check_32(), 1e-4);
}

