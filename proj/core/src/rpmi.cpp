#include "phantom/recovery/rpmi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace phantom::recovery {

std::string to_string(ContrastMode m) { return m == ContrastMode::deletion ? "deletion" : "masking"; }

ContrastMode contrast_mode_from_string(const std::string& s) {
  if (s == "deletion") return ContrastMode::deletion;
  if (s == "masking") return ContrastMode::masking;
  throw std::invalid_argument("unknown contrast mode '" + s + "' (expected deletion or masking)");
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

std::vector<std::int32_t> top_k(const std::vector<double>& values, int k) {
  std::vector<std::int32_t> ids(values.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(kk), ids.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      const double x = values[static_cast<std::size_t>(a)], y = values[static_cast<std::size_t>(b)];
                      return x != y ? x > y : a < b;
                    });
  ids.resize(kk);
  return ids;
}

std::size_t rank_in(const std::vector<double>& values, std::int32_t token) {
  const double v = values.at(static_cast<std::size_t>(token));
  std::size_t r = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] > v || (values[i] == v && static_cast<std::int32_t>(i) < token)) ++r;
  return r;
}

double rpmi(const std::vector<double>& logprobs_p, const std::vector<double>& logprobs_contrast, std::int32_t token) {
  const auto t = static_cast<std::size_t>(token);
  return logprobs_p.at(t) - logprobs_contrast.at(t);
}

namespace {

template <typename T>
std::vector<double> final_logprobs(const model::Model<T>& model, const model::TokenSeq& tokens) {
  const auto f = model::forward(model, tokens).final_logits();
  return log_softmax(std::vector<double>(f.begin(), f.end()));
}

}  // namespace

template <typename T>
RpmiTable rpmi_identify(const model::Model<T>& model, const model::TokenSeq& prompt, int k, ContrastMode mode) {
  if (k < 2) throw std::invalid_argument("rpmi_identify: k must be >= 2");
  if (k > model.config().vocab_size) throw std::invalid_argument("rpmi_identify: k exceeds the vocabulary");
  if (prompt.size() < 2) throw std::invalid_argument("rpmi_identify: prompt must have at least 2 tokens");
  RpmiTable t;
  t.prompt = prompt;
  t.k = k;
  t.mode = mode;
  t.logprobs = final_logprobs(model, prompt);
  const auto top_p = top_k(t.logprobs, k);

  for (std::size_t i = 0; i < prompt.size(); ++i) {
    RpmiRow row;
    row.position = i;
    row.contrast = prompt;
    if (mode == ContrastMode::deletion)
      row.contrast.erase(row.contrast.begin() + static_cast<std::ptrdiff_t>(i));
    else
      row.contrast[i] = model::kPlaceholderId;
    row.logprobs = final_logprobs(model, row.contrast);
    row.top_prompt = top_p;
    row.top_contrast = top_k(row.logprobs, k);
    for (auto y : top_p) {
      if (std::find(row.top_contrast.begin(), row.top_contrast.end(), y) == row.top_contrast.end()) continue;
      row.tokens.push_back(y);
      row.rpmi.push_back(rpmi(t.logprobs, row.logprobs, y));
    }
    row.empty_intersection = row.tokens.empty();
    t.rows.push_back(std::move(row));
  }

  for (auto& row : t.rows) {
    for (std::size_t j = 0; j < row.tokens.size(); ++j) {
      const double term = std::min(row.rpmi[j], 0.0);
      if (term == 0.0) continue;
      const auto y = static_cast<std::size_t>(row.tokens[j]);
      double mean = 0;
      for (const auto& r : t.rows) mean += t.logprobs[y] - r.logprobs[y];
      mean /= static_cast<double>(t.rows.size());
      double var = 0;
      for (const auto& r : t.rows) {
        const double d = t.logprobs[y] - r.logprobs[y] - mean;
        var += d * d;
      }
      var /= static_cast<double>(t.rows.size());
      row.s_plain += term;
      row.s_weighted += term * var;
    }
  }
  for (std::size_t i = 1; i < t.rows.size(); ++i)
    if (t.rows[i].s_weighted < t.rows[t.x_sub_position].s_weighted) t.x_sub_position = i;
  return t;
}

IdentifiedComponents identify_targets(const RpmiTable& table, int k) {
  if (table.rows.empty()) throw std::invalid_argument("identify_targets: empty R-PMI table");
  if (k == 0) k = table.k;
  if (k < 2) throw std::invalid_argument("identify_targets: k must be >= 2");
  IdentifiedComponents c;
  c.x_sub_position = table.x_sub_position;
  c.x_sub = table.prompt.at(table.x_sub_position);
  c.candidates = top_k(table.logprobs, k);
  for (std::size_t ci = 0; ci < c.candidates.size(); ++ci) {
    const auto y = c.candidates[ci];
    const double r0 = static_cast<double>(ci);
    double elev = 0, rank_sum = 0;
    std::size_t n_elev = 0;
    for (const auto& row : table.rows) {
      const double r = static_cast<double>(rank_in(row.logprobs, y));
      rank_sum += r;
      if (row.position == table.x_sub_position) continue;
      elev += r0 - r;
      ++n_elev;
    }
    const double avg = n_elev ? elev / static_cast<double>(n_elev) : 0.0;
    c.weighted_elevation.push_back((static_cast<double>(k) - r0) * avg);
    c.mean_rank.push_back(rank_sum / static_cast<double>(table.rows.size()));
  }
  std::size_t best_sub = 0, best_dom = 0;
  for (std::size_t i = 1; i < c.candidates.size(); ++i) {
    if (c.weighted_elevation[i] > c.weighted_elevation[best_sub]) best_sub = i;
    if (c.mean_rank[i] < c.mean_rank[best_dom]) best_dom = i;
  }
  c.y_sub = c.candidates[best_sub];
  c.y_dom = c.candidates[best_dom];
  c.ambiguous = c.y_sub == c.y_dom;
  return c;
}

nlohmann::json to_json(const RpmiTable& t) {
  auto rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"position", r.position},
                    {"contrast", r.contrast},
                    {"top_prompt", r.top_prompt},
                    {"top_contrast", r.top_contrast},
                    {"tokens", r.tokens},
                    {"rpmi", r.rpmi},
                    {"s_plain", r.s_plain},
                    {"s_weighted", r.s_weighted},
                    {"empty_intersection", r.empty_intersection}});
  return {{"prompt", t.prompt}, {"k", t.k}, {"mode", to_string(t.mode)}, {"x_sub_position", t.x_sub_position},
          {"rows", rows}};
}

nlohmann::json to_json(const IdentifiedComponents& c) {
  return {{"x_sub_position", c.x_sub_position},
          {"x_sub", c.x_sub},
          {"y_sub", c.y_sub},
          {"y_dom", c.y_dom},
          {"ambiguous", c.ambiguous},
          {"candidates", c.candidates},
          {"weighted_elevation", c.weighted_elevation},
          {"mean_rank", c.mean_rank}};
}

template RpmiTable rpmi_identify(const model::Model<float>&, const model::TokenSeq&, int, ContrastMode);
template RpmiTable rpmi_identify(const model::Model<double>&, const model::TokenSeq&, int, ContrastMode);

}  // namespace phantom::recovery
