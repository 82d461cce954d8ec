#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/nanoformer/forward.hpp"

namespace phantom::recovery {

/// How a contrastive prompt P' drops one token: removed outright, or
/// replaced by the PLACEHOLDER id so every other token keeps its position.
enum class ContrastMode { deletion, masking };

std::string to_string(ContrastMode m);
ContrastMode contrast_mode_from_string(const std::string& s);

/// One contrastive prompt and its R-PMI terms.
struct RpmiRow {
  std::size_t position = 0;
  model::TokenSeq contrast;
  /// Top-k tokens of P and of P', most probable first.
  std::vector<std::int32_t> top_prompt, top_contrast;
  /// Tokens in both top-k sets (in top_prompt order) and their
  /// R-PMI = log p(y | P) - log p(y | P').
  std::vector<std::int32_t> tokens;
  std::vector<double> rpmi;
  /// Sum of the negative R-PMI values, and the same sum with each term
  /// scaled by the token's log-probability-change variance.
  double s_plain = 0;
  double s_weighted = 0;
  bool empty_intersection = false;
  /// Log-probabilities of every vocabulary token under P'.
  std::vector<double> logprobs;
};

struct RpmiTable {
  model::TokenSeq prompt;
  int k = 10;
  ContrastMode mode = ContrastMode::deletion;
  std::vector<double> logprobs;
  std::vector<RpmiRow> rows;
  /// Row minimizing the weighted score (ties to the earlier position).
  std::size_t x_sub_position = 0;
};

/// Builds one contrastive prompt per position. Throws std::invalid_argument
/// for k < 2, k above the vocabulary, or a prompt shorter than 2.
template <typename T>
RpmiTable rpmi_identify(const model::Model<T>& model, const model::TokenSeq& prompt, int k = 10,
                        ContrastMode mode = ContrastMode::deletion);

/// R-PMI of `token` between two log-probability vectors.
double rpmi(const std::vector<double>& logprobs_p, const std::vector<double>& logprobs_contrast, std::int32_t token);

struct IdentifiedComponents {
  std::size_t x_sub_position = 0;
  std::int32_t x_sub = 0;
  std::int32_t y_sub = 0;
  std::int32_t y_dom = 0;
  bool ambiguous = false;
  /// Per candidate in V_top(P): weighted rank elevation and mean rank
  /// across all contrastive prompts.
  std::vector<std::int32_t> candidates;
  std::vector<double> weighted_elevation;
  std::vector<double> mean_rank;
};

/// y_sub maximizes (k - rank in P) * mean(rank in P - rank in P') over the
/// contrastive prompts other than the x_sub one; y_dom has the lowest mean
/// rank over all contrastive prompts. Both are drawn from the top-k of P
/// (k = 0 uses the table's k); ties go to the higher-probability candidate.
IdentifiedComponents identify_targets(const RpmiTable& table, int k = 0);

nlohmann::json to_json(const RpmiTable& t);
nlohmann::json to_json(const IdentifiedComponents& c);

/// Softmax log-probabilities of a logits row, in double precision.
std::vector<double> log_softmax(const std::vector<double>& logits);
/// Tokens ordered by descending value, ties by id; first k kept.
std::vector<std::int32_t> top_k(const std::vector<double>& values, int k);
/// 0-based descending rank, ties by id.
std::size_t rank_in(const std::vector<double>& values, std::int32_t token);

}  // namespace phantom::recovery
