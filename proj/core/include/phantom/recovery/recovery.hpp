#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/recovery/rpmi.hpp"
#include "phantom/recovery/search.hpp"

namespace phantom::recovery {

struct RecoveryConfig {
  int k = 10;
  ContrastMode mode = ContrastMode::deletion;
  int ig_steps = 5;
  std::size_t grid_points = 20;
  double grid_lo_fraction = 0.05;
  std::size_t tolerance = 3;

  void validate() const;
  friend bool operator==(const RecoveryConfig&, const RecoveryConfig&) = default;
};

void to_json(nlohmann::json& j, const RecoveryConfig& c);
void from_json(const nlohmann::json& j, RecoveryConfig& c);

struct Prediction {
  std::int32_t argmax = 0;
  double metric = 0;
  /// Five most probable tokens with their probabilities.
  std::vector<std::int32_t> top5;
  std::vector<double> top5_prob;
  std::vector<double> final_logits;
};

struct RecoveryOutcome {
  model::TokenSeq prompt;
  bool identified = false;
  std::string reason;
  IdentifiedComponents components;
  RpmiTable rpmi;
  std::optional<circuits::PromptPair> pair;
  EdgeCurve stage1;
  std::size_t bracket_lo = 0, bracket_hi = 0;
  std::size_t n_opt = 0;
  std::size_t total_edges = 0;
  std::optional<circuits::CircuitGraph> circuit;
  Prediction full;
  Prediction optimized;
  /// The circuit predicts y_sub where the full model predicted y_dom.
  bool recovered = false;
};

/// R-PMI identification, placeholder corrupt prompt, EAP-IG scoring, a
/// uniform edge-count scan, then golden-section search between the
/// neighbours of the best scan point. Identification failures are returned
/// as an unidentified outcome with a reason.
template <typename T>
RecoveryOutcome recover(const model::Model<T>& model, const model::TokenSeq& prompt, const RecoveryConfig& config);

template <typename T>
Prediction predict(const std::vector<T>& final_logits, std::int32_t y_sub, std::int32_t y_dom);

/// Table-style record: prompt, metric indicators, both top-5 lists.
nlohmann::json to_json(const RecoveryOutcome& o);

}  // namespace phantom::recovery
