#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "model_util.hpp"
#include "phantom/recovery/recovery.hpp"

namespace pc = phantom::circuits;
namespace pm = phantom::model;
namespace pr = phantom::recovery;

namespace {

const pc::PromptPair kPair{{3, 7, 11, 15, 20}, {3, 7, 11, 15, 1}, 25, 9};

template <typename T>
pm::Model<T> jittered(int layers = 2, int heads = 2, std::uint64_t seed = 5) {
  pm::Model<T> m(phantom::testing::tiny_config(layers, heads, 16, 32, seed));
  phantom::testing::jitter(m, seed * 31);
  return m;
}

std::size_t exhaustive_argmax(const pr::Evaluator& f, std::size_t a, std::size_t b) {
  std::size_t best = a;
  double v = f(a);
  for (std::size_t n = a + 1; n <= b; ++n)
    if (f(n) > v) v = f(n), best = n;
  return best;
}

pr::RpmiRow row_with(std::size_t pos, std::vector<double> lp) {
  pr::RpmiRow r;
  r.position = pos;
  r.logprobs = std::move(lp);
  return r;
}

}  // namespace

TEST(GoldenSection, QuadraticPeak) {
  const auto r = pr::golden_section([](std::size_t n) { return -std::pow(static_cast<double>(n) - 37.0, 2); }, 0, 100);
  EXPECT_EQ(r.n_opt, 37u);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_LT(r.evaluations, 20u);
}

TEST(GoldenSection, NarrowBracketIsExhaustive) {
  std::size_t calls = 0;
  const auto r = pr::golden_section([&](std::size_t n) { ++calls; return n == 6 ? 1.0 : 0.0; }, 4, 7);
  EXPECT_EQ(r.n_opt, 6u);
  EXPECT_EQ(calls, 4u);
  EXPECT_EQ(r.evaluations, 4u);
}

TEST(GoldenSection, ConstantReturnsSmallest) {
  EXPECT_EQ(pr::golden_section([](std::size_t) { return 2.5; }, 3, 40).n_opt, 3u);
}

TEST(GoldenSection, MatchesExhaustiveOnRandomUnimodal) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t a = rng() % 60;
    const std::size_t b = a + 1 + rng() % 40;
    const std::size_t peak = a + rng() % (b - a + 1);
    const double up = 0.1 + (rng() % 100) / 10.0, down = 0.1 + (rng() % 100) / 10.0;
    const bool plateau = rng() % 4 == 0 && peak < b;
    auto f = [=](std::size_t n) {
      const double d = static_cast<double>(n) - static_cast<double>(peak);
      if (d <= 0) return up * d;
      return plateau ? -down * (d - 1) : -down * d;
    };
    EXPECT_EQ(pr::golden_section(f, a, b).n_opt, exhaustive_argmax(f, a, b)) << "trial " << trial;
  }
}

TEST(GoldenSection, MemoIsSharedAndErrors) {
  pr::Memo memo{{10, 5.0}};
  std::size_t calls = 0;
  const auto r = pr::golden_section([&](std::size_t n) { ++calls; return -static_cast<double>(n); }, 8, 12, 3, &memo);
  EXPECT_EQ(r.n_opt, 10u);
  EXPECT_EQ(r.value, 5.0);
  EXPECT_EQ(calls, 3u);
  EXPECT_EQ(memo.size(), 4u);
  EXPECT_THROW(pr::golden_section([](std::size_t) { return 0.0; }, 5, 5), std::invalid_argument);
  EXPECT_THROW(pr::golden_section([](std::size_t) { return 0.0; }, 0, 5, 0), std::invalid_argument);
}

TEST(EdgeScan, GridAndIdentities) {
  const auto g = pr::uniform_grid(100);
  EXPECT_EQ(g.size(), 20u);
  EXPECT_EQ(g.front(), 5u);
  EXPECT_EQ(g.back(), 100u);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
  EXPECT_EQ(std::adjacent_find(g.begin(), g.end()), g.end());
  const auto small = pr::uniform_grid(7);
  EXPECT_TRUE(std::adjacent_find(small.begin(), small.end(), std::greater_equal<>()) == small.end());

  const auto m = jittered<float>();
  const auto scored = pc::eap_ig_scores(m, {kPair}, 2);
  const std::vector<pc::PreparedPair<float>> pairs{pc::prepare(m, kPair)};
  const auto total = scored.edge_count();
  const auto full = pr::scan_edges(m, scored, pairs, {total});
  EXPECT_NEAR(full.metric[0], pc::full_metric(pairs[0]), 1e-5);
  const auto none = pr::scan_edges(m, scored, pairs, {0});
  const auto cf = pairs[0].corrupt.final_logits();
  EXPECT_NEAR(none.metric[0], cf[kPair.y_sub] - cf[kPair.y_dom], 1e-5);
  EXPECT_THROW(pr::scan_edges(m, scored, pairs, {}), std::invalid_argument);
  EXPECT_THROW(pr::scan_edges(m, scored, pairs, {total + 1}), std::invalid_argument);
  std::ostringstream os;
  pr::write_edge_curve_csv(os, full);
  EXPECT_EQ(os.str().substr(0, 4), "n,M\n");
}

TEST(Rpmi, UnchangedProbabilitiesScoreZero) {
  auto m = jittered<double>();
  m.zero_unembedding();
  for (auto mode : {pr::ContrastMode::deletion, pr::ContrastMode::masking}) {
    const auto t = pr::rpmi_identify(m, kPair.clean, 5, mode);
    for (const auto& row : t.rows) {
      EXPECT_EQ(row.s_plain, 0.0);
      EXPECT_EQ(row.s_weighted, 0.0);
    }
  }
}

TEST(Rpmi, ScoresNeverPositiveAndContrastsWellFormed) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto m = jittered<float>(2, 2, seed);
    for (auto mode : {pr::ContrastMode::deletion, pr::ContrastMode::masking}) {
      const auto t = pr::rpmi_identify(m, kPair.clean, 10, mode);
      ASSERT_EQ(t.rows.size(), kPair.clean.size());
      for (const auto& row : t.rows) {
        EXPECT_LE(row.s_plain, 0.0);
        EXPECT_LE(row.s_weighted, 0.0);
        EXPECT_EQ(row.top_prompt.size(), 10u);
        EXPECT_EQ(row.empty_intersection, row.tokens.empty());
        if (mode == pr::ContrastMode::deletion) {
          EXPECT_EQ(row.contrast.size(), kPair.clean.size() - 1);
        } else {
          EXPECT_EQ(row.contrast[row.position], pm::kPlaceholderId);
        }
        for (std::size_t j = 0; j < row.tokens.size(); ++j) {
          EXPECT_NEAR(row.rpmi[j], -pr::rpmi(row.logprobs, t.logprobs, row.tokens[j]), 1e-12);
        }
      }
      EXPECT_LT(t.x_sub_position, kPair.clean.size());
      for (const auto& row : t.rows) EXPECT_GE(row.s_weighted, t.rows[t.x_sub_position].s_weighted);
    }
  }
  const auto m = jittered<float>();
  EXPECT_THROW(pr::rpmi_identify(m, kPair.clean, 1), std::invalid_argument);
  EXPECT_THROW(pr::rpmi_identify(m, pm::TokenSeq{3}, 5), std::invalid_argument);
  EXPECT_THROW(pr::rpmi_identify(m, kPair.clean, 33), std::invalid_argument);
}

TEST(Rpmi, HelperFunctions) {
  const std::vector<double> v{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(pr::top_k(v, 3), (std::vector<std::int32_t>{1, 2, 0}));
  EXPECT_EQ(pr::rank_in(v, 2), 1u);
  EXPECT_EQ(pr::rank_in(v, 3), 3u);
  const auto lp = pr::log_softmax({1.0, 1.0});
  EXPECT_NEAR(lp[0], std::log(0.5), 1e-15);
  EXPECT_EQ(pr::contrast_mode_from_string("masking"), pr::ContrastMode::masking);
  EXPECT_THROW(pr::contrast_mode_from_string("drop"), std::invalid_argument);
}

TEST(Targets, HandBuiltTable) {
  pr::RpmiTable t;
  t.k = 2;
  t.prompt = {4, 5, 6};
  t.x_sub_position = 2;
  t.logprobs = {-3.0, -0.5, -1.0, -4.0};
  t.rows.push_back(row_with(0, {-0.2, -0.6, -2.0, -4.0}));
  t.rows.push_back(row_with(1, {-0.3, -0.7, -2.0, -4.0}));
  t.rows.push_back(row_with(2, {-3.0, -0.1, -5.0, -4.0}));
  const auto c = pr::identify_targets(t);
  ASSERT_EQ(c.candidates, (std::vector<std::int32_t>{1, 2}));
  EXPECT_EQ(c.x_sub, 6);
  EXPECT_DOUBLE_EQ(c.weighted_elevation[0], 2.0 * -1.0);
  EXPECT_DOUBLE_EQ(c.weighted_elevation[1], 1.0 * -1.0);
  EXPECT_EQ(c.y_dom, 1);
  EXPECT_EQ(c.y_sub, 2);
  EXPECT_FALSE(c.ambiguous);

  pr::RpmiTable still = t;
  for (auto& r : still.rows) r.logprobs = still.logprobs;
  const auto s = pr::identify_targets(still);
  for (double w : s.weighted_elevation) EXPECT_EQ(w, 0.0);
  EXPECT_EQ(s.y_dom, 1);
  EXPECT_TRUE(s.ambiguous);

  const auto wide = pr::identify_targets(t, 3);
  EXPECT_EQ(wide.candidates.size(), 3u);
  EXPECT_THROW(pr::identify_targets(pr::RpmiTable{}), std::invalid_argument);
}

TEST(Recover, DeterministicAndConsistent) {
  const auto m = jittered<double>(2, 2, 9);
  pr::RecoveryConfig cfg;
  cfg.k = 5;
  const auto a = pr::recover(m, kPair.clean, cfg);
  const auto b = pr::recover(m, kPair.clean, cfg);
  EXPECT_EQ(pr::to_json(a), pr::to_json(b));
  if (a.identified) {
    ASSERT_TRUE(a.pair);
    EXPECT_EQ(a.pair->corrupt[a.components.x_sub_position], pm::kPlaceholderId);
    EXPECT_LE(a.n_opt, a.total_edges);
    const double best1 = *std::max_element(a.stage1.metric.begin(), a.stage1.metric.end());
    EXPECT_GE(a.optimized.metric, best1 - 1e-9);
    EXPECT_LE(a.bracket_lo, a.n_opt);
    EXPECT_GE(a.bracket_hi, a.n_opt);
    EXPECT_EQ(a.circuit->active_count(), a.n_opt);
  } else {
    EXPECT_FALSE(a.reason.empty());
  }
  if (a.recovered) EXPECT_EQ(a.optimized.argmax, a.components.y_sub);
  const auto j = pr::to_json(a);
  EXPECT_EQ(j["full"]["top5"].size(), 5u);
  EXPECT_EQ(j["circuit"]["top5"].size(), 5u);
}

TEST(Recover, ManyModelsKeepInvariants) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto m = jittered<float>(1, 2, seed);
    for (auto mode : {pr::ContrastMode::deletion, pr::ContrastMode::masking}) {
      pr::RecoveryConfig cfg;
      cfg.mode = mode;
      cfg.k = 4;
      const auto o = pr::recover(m, kPair.clean, cfg);
      if (o.recovered) EXPECT_EQ(o.optimized.argmax, o.components.y_sub);
      if (!o.identified) {
        EXPECT_TRUE(o.components.ambiguous);
        continue;
      }
      const double best1 = *std::max_element(o.stage1.metric.begin(), o.stage1.metric.end());
      EXPECT_GE(o.optimized.metric, best1 - 1e-5);
    }
  }
}

TEST(Recover, ConfigValidationAndJson) {
  pr::RecoveryConfig c;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<pr::RecoveryConfig>(), c);
  c.k = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.grid_lo_fraction = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
