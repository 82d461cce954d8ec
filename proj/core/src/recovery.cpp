#include "phantom/recovery/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "phantom/circuits/circuit_io.hpp"

namespace phantom::recovery {

void RecoveryConfig::validate() const {
  if (k < 2) throw std::invalid_argument("RecoveryConfig: k must be >= 2");
  if (ig_steps < 1) throw std::invalid_argument("RecoveryConfig: ig_steps must be >= 1");
  if (grid_points < 1) throw std::invalid_argument("RecoveryConfig: grid_points must be >= 1");
  if (!(grid_lo_fraction >= 0 && grid_lo_fraction <= 1))
    throw std::invalid_argument("RecoveryConfig: grid_lo_fraction must lie in [0, 1]");
  if (tolerance < 1) throw std::invalid_argument("RecoveryConfig: tolerance must be >= 1");
}

void to_json(nlohmann::json& j, const RecoveryConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"mode", to_string(c.mode)},
                     {"ig_steps", c.ig_steps},
                     {"grid_points", c.grid_points},
                     {"grid_lo_fraction", c.grid_lo_fraction},
                     {"tolerance", c.tolerance}};
}

void from_json(const nlohmann::json& j, RecoveryConfig& c) {
  RecoveryConfig d;
  c.k = j.value("k", d.k);
  c.mode = contrast_mode_from_string(j.value("mode", to_string(d.mode)));
  c.ig_steps = j.value("ig_steps", d.ig_steps);
  c.grid_points = j.value("grid_points", d.grid_points);
  c.grid_lo_fraction = j.value("grid_lo_fraction", d.grid_lo_fraction);
  c.tolerance = j.value("tolerance", d.tolerance);
}

template <typename T>
Prediction predict(const std::vector<T>& final_logits, std::int32_t y_sub, std::int32_t y_dom) {
  Prediction p;
  p.final_logits.assign(final_logits.begin(), final_logits.end());
  p.argmax = model::argmax<T>(final_logits);
  p.metric = p.final_logits.at(static_cast<std::size_t>(y_sub)) - p.final_logits.at(static_cast<std::size_t>(y_dom));
  const auto lp = log_softmax(p.final_logits);
  p.top5 = top_k(lp, 5);
  for (auto t : p.top5) p.top5_prob.push_back(std::exp(lp[static_cast<std::size_t>(t)]));
  return p;
}

template <typename T>
RecoveryOutcome recover(const model::Model<T>& model, const model::TokenSeq& prompt, const RecoveryConfig& config) {
  config.validate();
  RecoveryOutcome o;
  o.prompt = prompt;
  o.total_edges = model.topology().edge_count();
  o.rpmi = rpmi_identify(model, prompt, config.k, config.mode);
  o.components = identify_targets(o.rpmi);
  const auto& c = o.components;
  const auto clean = model::forward(model, prompt);
  o.full = predict(clean.final_logits(), c.y_sub, c.y_dom);
  if (c.ambiguous) {
    o.reason = "ambiguous targets: y_sub and y_dom both resolve to token " + std::to_string(c.y_sub);
    o.optimized = o.full;
    return o;
  }
  o.identified = true;

  circuits::PromptPair pair{prompt, prompt, c.y_sub, c.y_dom};
  pair.corrupt[c.x_sub_position] = model::kPlaceholderId;
  o.pair = pair;
  const std::vector<circuits::PreparedPair<T>> prepared{
      circuits::PreparedPair<T>{pair, clean, model::forward(model, pair.corrupt)}};
  const auto scored = circuits::eap_ig_scores(model, {pair}, config.ig_steps);

  Memo memo;
  const auto grid = uniform_grid(o.total_edges, config.grid_points, config.grid_lo_fraction);
  o.stage1 = scan_edges(model, scored, prepared, grid, &memo);
  const std::size_t best = o.stage1.argmax();
  o.bracket_lo = o.stage1.n[best > 0 ? best - 1 : 0];
  o.bracket_hi = o.stage1.n[std::min(best + 1, o.stage1.n.size() - 1)];
  if (best == 0 && o.stage1.n[0] > 0) o.bracket_lo = 0;
  if (o.bracket_lo < o.bracket_hi) {
    o.n_opt = golden_section(model, scored, prepared, o.bracket_lo, o.bracket_hi, config.tolerance, &memo).n_opt;
  } else {
    o.n_opt = o.stage1.n[best];
  }

  o.circuit = circuits::prune_top_n(scored, o.n_opt);
  const auto run = circuits::run_circuit(model, *o.circuit, prepared.front());
  const std::size_t v = run.logits.dim(1), n = run.logits.dim(0);
  const auto d = run.logits.data();
  o.optimized = predict(std::vector<T>(d.begin() + static_cast<std::ptrdiff_t>((n - 1) * v), d.end()), c.y_sub, c.y_dom);
  o.recovered = o.full.argmax == c.y_dom && o.optimized.argmax == c.y_sub;
  return o;
}

namespace {

nlohmann::json prediction_json(const Prediction& p) {
  auto top = nlohmann::json::array();
  for (std::size_t i = 0; i < p.top5.size(); ++i) top.push_back({{"token", p.top5[i]}, {"prob", p.top5_prob[i]}});
  return {{"argmax", p.argmax}, {"M", p.metric}, {"top5", top}};
}

}  // namespace

nlohmann::json to_json(const RecoveryOutcome& o) {
  nlohmann::json stage1 = nlohmann::json::array();
  for (std::size_t i = 0; i < o.stage1.n.size(); ++i) stage1.push_back({{"n", o.stage1.n[i]}, {"M", o.stage1.metric[i]}});
  return {{"prompt", o.prompt},
          {"identified", o.identified},
          {"reason", o.reason},
          {"components", to_json(o.components)},
          {"corrupt", o.pair ? nlohmann::json(o.pair->corrupt) : nlohmann::json(nullptr)},
          {"stage1", stage1},
          {"bracket", {o.bracket_lo, o.bracket_hi}},
          {"n_opt", o.n_opt},
          {"total_edges", o.total_edges},
          {"full", prediction_json(o.full)},
          {"circuit", prediction_json(o.optimized)},
          {"recovered", o.recovered}};
}

template Prediction predict(const std::vector<float>&, std::int32_t, std::int32_t);
template Prediction predict(const std::vector<double>&, std::int32_t, std::int32_t);
template RecoveryOutcome recover(const model::Model<float>&, const model::TokenSeq&, const RecoveryConfig&);
template RecoveryOutcome recover(const model::Model<double>&, const model::TokenSeq&, const RecoveryConfig&);

}  // namespace phantom::recovery
