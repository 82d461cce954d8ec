#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "phantom/dynamics/metrics.hpp"
#include "phantom/recovery/recovery.hpp"
#include "phantom/shadowgen/dataset.hpp"

namespace phantom::pipeline {

/// Model size axis: a named preset (S, M, L) or "custom" dimensions.
struct ModelSpec {
  std::string preset = "S";
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  /// 0 selects 4 * d_model.
  int d_mlp = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ProbeConfig {
  /// High-attention threshold on span attention.
  double threshold = 0.2;
  /// Fixed probe set size used for attention tracking and circuit work.
  std::size_t probe_pairs = 32;
  int ig_steps = 5;
  /// Head proportions ablated by the ablation probe.
  std::vector<double> ablation_proportions{0.1, 0.2, 0.5};

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

struct RunConfig {
  std::string name = "run";
  data::DatasetSpec dataset;
  ModelSpec model;
  dynamics::TrainConfig train;
  dynamics::PhaseThresholds phases;
  ProbeConfig probe;
  recovery::RecoveryConfig recovery;
  std::filesystem::path output_dir = "runs/run";
  /// Write a checkpoint every k epochs (the final epoch is always written).
  int checkpoint_every = 1;
  /// Stop once RO has stayed at or below the recovered threshold with
  /// R_dom at or above the high threshold for this many consecutive epochs;
  /// 0 disables.
  int early_stop_patience = 0;

  /// Throws std::invalid_argument naming the first invalid field.
  void validate() const;

  /// Model configuration with the dataset's resolved vocabulary.
  model::ModelConfig model_config() const;

  /// Hex FNV-1a 64 digest of the canonical JSON with the output directory
  /// and epoch budget removed: two configs that would produce the same
  /// per-epoch trajectory share a hash.
  std::string hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);
void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown top-level keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig read_run_config(const std::filesystem::path& path);
void write_run_config(const std::filesystem::path& path, const RunConfig& c);

/// Applies a dotted-path override such as "train.learning_rate=0.01"; the
/// value is parsed as JSON, falling back to a string. Throws
/// std::invalid_argument on a malformed assignment or unknown key.
void apply_override(RunConfig& c, const std::string& assignment);

/// FNV-1a 64 digest as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace phantom::pipeline
