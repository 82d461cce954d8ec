#include "phantom/dynamics/metrics.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "phantom/nanoformer/forward.hpp"

namespace phantom::dynamics {

LPResult compute_LP(const EpochLedger& ledger) {
  double sub = 0, total = 0;
  for (const auto& e : ledger.entries) {
    total += e.loss;
    if (e.subordinate) sub += e.loss;
  }
  if (total == 0) return {0.0, true};
  return {sub / total, false};
}

EpochMetrics metrics_from_counts(const OvershadowCounts& c) {
  if (c.n_sub == 0 || c.n_dom == 0) throw std::invalid_argument("metrics: N_sub and N_dom must be positive");
  if (c.m_sub > c.n_sub || c.m_dom > c.n_dom) throw std::invalid_argument("metrics: match count exceeds total");
  EpochMetrics m;
  m.counts = c;
  m.ao = static_cast<double>(c.m_sub) / static_cast<double>(c.n_sub);
  m.r_dom = static_cast<double>(c.m_dom) / static_cast<double>(c.n_dom);
  if (c.m_dom > 0) m.ro = m.ao / m.r_dom;
  return m;
}

double popularity(std::size_t n_dom, std::size_t n_sub) {
  if (n_sub == 0) throw std::invalid_argument("popularity: N_sub must be positive");
  return static_cast<double>(n_dom) / static_cast<double>(n_sub);
}

namespace {

template <typename T>
std::vector<std::int32_t> predictions(const model::Model<T>& model, const std::vector<data::PromptRecord>& prompts) {
  constexpr std::size_t kChunk = 256;
  std::vector<std::int32_t> out;
  out.reserve(prompts.size());
  std::vector<std::int32_t> toks;
  for (std::size_t s = 0; s < prompts.size(); s += kChunk) {
    const std::size_t n = std::min(kChunk, prompts.size() - s);
    toks.clear();
    for (std::size_t i = 0; i < n; ++i) toks.insert(toks.end(), prompts[s + i].tokens.begin(), prompts[s + i].tokens.end());
    const auto logits = model::batch_final_logits(model, toks, n, data::kPromptLength);
    const std::size_t v = logits.shape()[1];
    for (std::size_t i = 0; i < n; ++i) out.push_back(model::argmax<T>(logits.data().subspan(i * v, v)));
  }
  return out;
}

}  // namespace

template <typename T>
OvershadowCounts count_overshadowing(const model::Model<T>& model, const data::Dataset& ds,
                                     const data::EvalSplit& split) {
  if (split.dominant.empty() || split.subordinate.empty()) {
    throw std::invalid_argument("evaluate_overshadowing: evaluation split needs dominant and subordinate prompts");
  }
  OvershadowCounts c;
  c.n_dom = split.dominant.size();
  c.n_sub = split.subordinate.size();
  const auto pd = predictions(model, split.dominant);
  for (std::size_t i = 0; i < pd.size(); ++i)
    if (pd[i] == ds.group_of(split.dominant[i]).y_dom) ++c.m_dom;
  const auto ps = predictions(model, split.subordinate);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i] == ds.group_of(split.subordinate[i]).y_dom) ++c.m_sub;
  return c;
}

template <typename T>
EpochMetrics evaluate_overshadowing(const model::Model<T>& model, const data::Dataset& ds,
                                    const data::EvalSplit& split) {
  return metrics_from_counts(count_overshadowing(model, ds, split));
}

PhaseReport segment_phases(const std::vector<std::optional<double>>& ro, PhaseThresholds th) {
  if (ro.empty()) throw std::invalid_argument("segment_phases: empty series");
  PhaseReport r;
  r.thresholds = th;
  const int n = static_cast<int>(ro.size());
  auto val = [&](int i) { return ro[static_cast<std::size_t>(i)]; };
  auto mean_abs_delta = [&](int from, int to) -> std::optional<double> {
    if (to <= from) return std::nullopt;
    double s = 0;
    for (int i = from; i < to; ++i) {
      const double a = val(i).value_or(0.0), b = val(i + 1).value_or(0.0);
      s += std::abs(b - a);
    }
    return s / (to - from);
  };

  int onset = -1;
  for (int i = 0; i < n; ++i) {
    if (val(i) && *val(i) >= th.high) {
      onset = i;
      break;
    }
  }
  if (onset < 0) return r;
  r.onset = onset;
  r.onset_epoch = onset;
  r.onset_rate = mean_abs_delta(0, onset);

  int end = onset;
  while (end < n && val(end) && *val(end) > th.high) ++end;
  r.duration = end - onset;
  const int last_high = std::max(onset, end - 1);
  r.high_end_epoch = last_high;

  for (int i = last_high + 1; i < n; ++i) {
    if (val(i) && *val(i) <= th.recovered) {
      r.recovery = i - last_high;
      r.recovered_epoch = i;
      r.recovery_rate = mean_abs_delta(last_high, i);
      break;
    }
  }
  return r;
}

PhaseReport segment_phases(const std::vector<EpochMetrics>& series, PhaseThresholds th) {
  std::vector<std::optional<double>> ro;
  ro.reserve(series.size());
  for (const auto& m : series) ro.push_back(m.ro);
  return segment_phases(ro, th);
}

namespace {
template <typename V>
nlohmann::json opt(const std::optional<V>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
}  // namespace

nlohmann::json to_json(const PhaseReport& r) {
  return nlohmann::json{{"onset", opt(r.onset)},
                        {"duration", opt(r.duration)},
                        {"recovery", opt(r.recovery)},
                        {"onset_rate", opt(r.onset_rate)},
                        {"recovery_rate", opt(r.recovery_rate)},
                        {"onset_epoch", opt(r.onset_epoch)},
                        {"high_end_epoch", opt(r.high_end_epoch)},
                        {"recovered_epoch", opt(r.recovered_epoch)},
                        {"threshold_high", r.thresholds.high},
                        {"threshold_recovered", r.thresholds.recovered}};
}

nlohmann::json to_json(const EpochMetrics& m) {
  return nlohmann::json{{"epoch", m.epoch},         {"AO", m.ao},         {"R_dom", m.r_dom},
                        {"RO", opt(m.ro)},          {"LP", m.lp},         {"mean_loss", m.mean_loss},
                        {"M_sub", m.counts.m_sub},  {"N_sub", m.counts.n_sub},
                        {"M_dom", m.counts.m_dom},  {"N_dom", m.counts.n_dom}};
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << format_number(m.ao) << ',' << format_number(m.r_dom) << ','
     << (m.ro ? format_number(*m.ro) : std::string("NA")) << ',' << format_number(m.lp) << ','
     << format_number(m.mean_loss) << ',' << m.counts.m_sub << ',' << m.counts.n_sub << ',' << m.counts.m_dom << ','
     << m.counts.n_dom;
  return os.str();
}

void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& rows) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) os << metrics_csv_row(r) << '\n';
}

std::vector<EpochMetrics> read_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsCsvHeader) throw std::runtime_error("metrics CSV: unexpected header");
  std::vector<EpochMetrics> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw std::runtime_error("metrics CSV: expected 10 columns in '" + line + "'");
    EpochMetrics m;
    m.epoch = std::stoi(f[0]);
    m.ao = std::stod(f[1]);
    m.r_dom = std::stod(f[2]);
    if (f[3] != "NA") m.ro = std::stod(f[3]);
    m.lp = std::stod(f[4]);
    m.mean_loss = std::stod(f[5]);
    m.counts = {std::stoul(f[6]), std::stoul(f[7]), std::stoul(f[8]), std::stoul(f[9])};
    out.push_back(m);
  }
  return out;
}

template OvershadowCounts count_overshadowing(const model::Model<float>&, const data::Dataset&, const data::EvalSplit&);
template OvershadowCounts count_overshadowing(const model::Model<double>&, const data::Dataset&, const data::EvalSplit&);
template EpochMetrics evaluate_overshadowing(const model::Model<float>&, const data::Dataset&, const data::EvalSplit&);
template EpochMetrics evaluate_overshadowing(const model::Model<double>&, const data::Dataset&, const data::EvalSplit&);

}  // namespace phantom::dynamics
