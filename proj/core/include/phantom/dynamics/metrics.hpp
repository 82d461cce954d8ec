#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/dynamics/training.hpp"

namespace phantom::dynamics {

struct LPResult {
  double lp = 0;
  /// Total loss was zero; LP reported as 0.
  bool zero_total = false;
};

/// Subordinate share of the epoch's summed loss.
LPResult compute_LP(const EpochLedger& ledger);

struct OvershadowCounts {
  std::size_t m_sub = 0, n_sub = 0, m_dom = 0, n_dom = 0;
  friend bool operator==(const OvershadowCounts&, const OvershadowCounts&) = default;
};

struct EpochMetrics {
  int epoch = 0;
  double ao = 0;
  double r_dom = 0;
  /// Empty when R_dom = 0.
  std::optional<double> ro;
  double lp = 0;
  double mean_loss = 0;
  OvershadowCounts counts;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

/// AO = M_sub / N_sub, R_dom = M_dom / N_dom, RO = AO / R_dom.
/// Throws std::invalid_argument when a count exceeds its total or a total
/// is zero.
EpochMetrics metrics_from_counts(const OvershadowCounts& c);

/// Ratio of dominant to subordinate record counts.
double popularity(std::size_t n_dom, std::size_t n_sub);

/// Greedy answer for each prompt; M_dom counts dominant prompts answered
/// with Y_dom, M_sub counts subordinate prompts answered with their group's
/// Y_dom. Throws on an empty split.
template <typename T>
OvershadowCounts count_overshadowing(const model::Model<T>& model, const data::Dataset& ds,
                                     const data::EvalSplit& split);

template <typename T>
EpochMetrics evaluate_overshadowing(const model::Model<T>& model, const data::Dataset& ds,
                                    const data::EvalSplit& split);

struct PhaseThresholds {
  double high = 0.9;
  double recovered = 0.1;
  friend bool operator==(const PhaseThresholds&, const PhaseThresholds&) = default;
};

/// Onset: epochs before RO first reaches `high`. Duration: contiguous epochs
/// from there with RO above `high`. Recovery: epochs from the last high
/// epoch until RO first falls to `recovered`. Rates are mean |dRO| per epoch
/// over the onset and recovery spans. Undefined RO counts as neither high
/// nor recovered. Absent phases are empty.
struct PhaseReport {
  std::optional<int> onset;
  std::optional<int> duration;
  std::optional<int> recovery;
  std::optional<double> onset_rate;
  std::optional<double> recovery_rate;
  /// Epoch indices bounding the phases.
  std::optional<int> onset_epoch, high_end_epoch, recovered_epoch;
  PhaseThresholds thresholds;

  friend bool operator==(const PhaseReport&, const PhaseReport&) = default;
};

PhaseReport segment_phases(const std::vector<std::optional<double>>& ro, PhaseThresholds th = {});
PhaseReport segment_phases(const std::vector<EpochMetrics>& series, PhaseThresholds th = {});

nlohmann::json to_json(const PhaseReport& r);
nlohmann::json to_json(const EpochMetrics& m);

/// Fixed formatting used by every CSV writer: shortest round-trip decimal.
std::string format_number(double v);

inline constexpr const char* kMetricsCsvHeader = "epoch,AO,R_dom,RO,LP,mean_loss,M_sub,N_sub,M_dom,N_dom";
std::string metrics_csv_row(const EpochMetrics& m);
void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& rows);
/// Parses a metrics CSV written by write_metrics_csv.
std::vector<EpochMetrics> read_metrics_csv(const std::string& text);

}  // namespace phantom::dynamics
