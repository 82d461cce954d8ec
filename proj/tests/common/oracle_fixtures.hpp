#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "phantom/circuits/circuit.hpp"
#include "phantom/dynamics/training.hpp"

namespace phantom::testing {

/// Average ranks (ties share the mean rank).
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> o(v.size());
  std::iota(o.begin(), o.end(), 0);
  std::sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < o.size();) {
    std::size_t j = i;
    while (j + 1 < o.size() && v[o[j + 1]] == v[o[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[o[k]] = static_cast<double>(i + j) / 2.0;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double c = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return c / std::sqrt(va * vb);
}

struct OracleResult {
  std::size_t edges = 0;
  double spearman = 0;
  /// Edges strictly above the 75th |S| percentile whose sign disagrees with
  /// the exact patch effect.
  std::size_t top_quartile_sign_errors = 0;
  std::size_t top_quartile = 0;
};

/// EAP-IG scores of a 1-layer 2-head model (trained briefly on a small
/// synthetic dataset) against the exact per-edge patching effect
/// dM = M(all clean) - M(edge corrupted), both averaged over `pairs`
/// subject-placeholder pairs, in 64-bit.
inline OracleResult eap_ig_oracle(std::uint64_t seed, std::size_t pairs = 16, int ig_steps = 5,
                                  int train_epochs = 3) {
  data::DatasetSpec spec;
  spec.popularity = 5;
  spec.target_tokens = 720;
  spec.seed = seed;
  const auto ds = data::generate(spec);
  model::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_mlp = 64;
  c.vocab_size = ds.vocab_size;
  c.seed = seed;
  model::Model<double> m(c);
  dynamics::TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.seed = seed;
  dynamics::Adam<double> opt(m, tc);
  for (int e = 1; e <= train_epochs; ++e) dynamics::train_epoch(m, opt, ds, tc, e);

  std::vector<circuits::PromptPair> set;
  for (const auto& g : ds.groups) {
    if (set.size() >= pairs) break;
    model::TokenSeq clean(g.x_bg.begin(), g.x_bg.end());
    clean.push_back(g.x_sub);
    auto corrupt = clean;
    corrupt.back() = model::kPlaceholderId;
    set.push_back({clean, corrupt, g.y_sub, g.y_dom});
  }
  const auto graph = circuits::eap_ig_scores(m, set, ig_steps);
  std::vector<double> exact(graph.edge_count(), 0);
  for (const auto& p : set) {
    const auto prep = circuits::prepare(m, p);
    const double full = circuits::full_metric(prep);
    for (std::size_t e = 0; e < graph.edge_count(); ++e) {
      auto g2 = graph;
      g2.active.assign(g2.edge_count(), true);
      g2.active[e] = false;
      exact[e] += (full - circuits::run_circuit(m, g2, prep).metric) / static_cast<double>(set.size());
    }
  }
  OracleResult r;
  r.edges = graph.edge_count();
  r.spearman = spearman(graph.scores, exact);
  std::vector<double> mag;
  for (double s : graph.scores) mag.push_back(std::abs(s));
  auto sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  const double q75 = sorted[static_cast<std::size_t>(std::floor(0.75 * static_cast<double>(sorted.size() - 1)))];
  for (std::size_t e = 0; e < mag.size(); ++e) {
    if (mag[e] <= q75) continue;
    ++r.top_quartile;
    if ((graph.scores[e] > 0) != (exact[e] > 0)) ++r.top_quartile_sign_errors;
  }
  return r;
}

}  // namespace phantom::testing
