#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/circuits/circuit.hpp"
#include "phantom/dynamics/metrics.hpp"
#include "phantom/pipeline/run_config.hpp"
#include "phantom/probes/probes.hpp"
#include "phantom/recovery/recovery.hpp"

namespace phantom::pipeline {

/// A run directory's existing config or checkpoints disagree with the
/// requested config.
class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path dataset() const { return root / "dataset.jsonl"; }
  std::filesystem::path metrics() const { return root / "metrics.csv"; }
  std::filesystem::path attention() const { return root / "attention.csv"; }
  std::filesystem::path phases() const { return root / "phases.json"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path checkpoint(int epoch) const;
  std::filesystem::path optimizer() const { return checkpoints() / "optimizer.ckpt"; }
  std::filesystem::path circuits(int epoch) const;
};

struct TrainOptions {
  /// Continue from the newest checkpoint when the directory holds one.
  bool resume = true;
  /// Return after this epoch without finishing, as an interrupted run would.
  std::optional<int> stop_after;
  /// Per-epoch progress lines.
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<dynamics::EpochMetrics> metrics;
  dynamics::PhaseReport phases;
  std::optional<int> resumed_from;
  bool stopped_early = false;
  /// The epoch budget was exhausted or the early-stop rule fired.
  bool complete = false;
};

/// Trains a run: dataset, per-epoch evaluation on a fixed split, metrics CSV,
/// per-epoch probe-set attention CSV, checkpoints, phase report, manifest.
/// Throws ConfigMismatch when resuming into a directory produced by a
/// different config, and dynamics::TrainingError on a non-finite loss.
TrainResult train_run(const RunConfig& config, const TrainOptions& options = {});

/// Evaluation split used by every stage of a run.
data::EvalSplit eval_split(const RunConfig& config, const data::Dataset& ds);

/// Epochs with a stored checkpoint, ascending.
std::vector<int> checkpoint_epochs(const std::filesystem::path& run_dir);

struct LoadedRun {
  RunConfig config;
  data::Dataset dataset;
  data::EvalSplit split;
  std::vector<dynamics::EpochMetrics> metrics;
};

/// Reads config, dataset and metrics of a run directory.
LoadedRun load_run(const std::filesystem::path& run_dir);

model::Model<float> load_model(const std::filesystem::path& run_dir, int epoch);

/// Subordinate prompts paired with their placeholder-corrupted copies and
/// ground-truth targets, in split order.
std::vector<circuits::PromptPair> subordinate_pairs(const data::Dataset& ds,
                                                    const std::vector<data::PromptRecord>& records, std::size_t limit);

/// Subset of `pairs` the model answers with y_dom.
std::vector<circuits::PromptPair> overshadowed(const model::Model<float>& model,
                                               const std::vector<circuits::PromptPair>& pairs);

/// Position of the subject token in every prompt.
std::vector<std::size_t> subject_span();

struct SweepCell {
  std::string label;
  int popularity = 5;
  std::int64_t target_tokens = 2000;
  std::string model = "S";
};

/// Cartesian grid in P-major, then model, then D order.
std::vector<SweepCell> sweep_grid(const std::vector<int>& popularity, const std::vector<std::int64_t>& tokens,
                                  const std::vector<std::string>& models);

struct SweepRow {
  SweepCell cell;
  /// "ok" or the failure message.
  std::string status;
  dynamics::PhaseReport phases;
  int epochs = 0;
  std::optional<double> final_ro;
};

inline constexpr const char* kSweepCsvHeader =
    "cell,P,D,model,status,onset,duration,recovery,onset_rate,recovery_rate,epochs,final_RO";

/// Runs every cell in order under `base.output_dir / "cells" / label`; a
/// failing cell is recorded and the sweep continues. Writes sweep.csv.
std::vector<SweepRow> run_sweep(const RunConfig& base, const std::vector<SweepCell>& cells,
                                const TrainOptions& options = {});
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

/// Circuit artifacts for one checkpoint; each action writes into `dir`.
struct CircuitContext {
  const model::Model<float>& model;
  std::vector<circuits::PromptPair> pairs;
  std::filesystem::path dir;
};

/// EAP-IG scores over the pairs; writes circuit.json and circuit.dot.
circuits::CircuitGraph circuit_build(const CircuitContext& ctx, int ig_steps);

struct OptimizeResult {
  recovery::EdgeCurve curve;
  std::size_t bracket_lo = 0, bracket_hi = 0;
  recovery::SearchResult search;
  circuits::CircuitGraph circuit;
};

/// Uniform scan then golden-section search over the edge count of the
/// scored graph read from circuit.json; writes edge_curve.csv,
/// circuit_opt.json and circuit_opt.dot.
OptimizeResult circuit_optimize(const CircuitContext& ctx, const recovery::RecoveryConfig& config);

/// Reads circuit_opt.json when present, otherwise circuit.json.
circuits::CircuitGraph read_circuit(const std::filesystem::path& dir);

struct ProbeResult {
  probes::AttentionReport attention;
  probes::HighAttentionSet high;
  std::vector<probes::HeadId> circuit_heads;
  /// Mean attention on the subject over the circuit's heads in patched runs.
  double circuit_attention = 0;
  std::vector<probes::LogitLensReport> lens;
  /// Prompts whose lens has a juncture.
  std::size_t junctures = 0;
  probes::Structure logits_structure;
};

/// Attention, high-attention set, logit lens and logits-node structure of
/// the circuit in `dir`; writes probe.json.
ProbeResult circuit_probe(const CircuitContext& ctx, double threshold, std::optional<int> epoch = std::nullopt);

/// Head ablations at each proportion; writes ablation.json.
std::vector<probes::AblationResult> circuit_ablate(const CircuitContext& ctx, const std::vector<double>& proportions);

/// Recovery pipeline on each clean prompt of the pairs; writes
/// recovery.json.
std::vector<recovery::RecoveryOutcome> circuit_recover(const CircuitContext& ctx,
                                                       const recovery::RecoveryConfig& config);

nlohmann::json to_json(const ProbeResult& r, const model::Topology& topo);

/// Summary of a run directory (config, phases, final metrics, artifacts);
/// throws std::runtime_error when the manifest is invalid.
nlohmann::json run_report(const std::filesystem::path& run_dir);

}  // namespace phantom::pipeline
