#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/nanoformer/checkpoint.hpp"
#include "phantom/nanoformer/model.hpp"
#include "phantom/shadowgen/dataset.hpp"

namespace phantom::dynamics {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  int epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t eval_dom = 500;
  std::size_t eval_sub = 500;

  /// Throws std::invalid_argument on a non-positive learning rate (zero is
  /// allowed as a frozen run), batch size 0, or negative epochs.
  void validate() const;

  /// Per-epoch shuffle seed derived from the master seed.
  std::uint64_t epoch_seed(int epoch) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Raised when a batch produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(int epoch, std::size_t batch, double lr, const std::string& what);
  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

/// Adam with bias correction; moment buffers kept in the model precision.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const model::Model<T>& model, const TrainConfig& config);

  void step(model::Model<T>& model, const std::vector<nd::Tensor<T>>& grads);
  std::int64_t steps() const noexcept { return t_; }

  /// Moment buffers as checkpoint extras ("adam.m.<param>", "adam.v.<param>").
  std::vector<model::NamedTensor> state(const model::Model<T>& model) const;
  /// Restores buffers written by state(); throws on a missing or
  /// mis-shaped buffer.
  void restore(const model::Model<T>& model, const model::Checkpoint& ckpt, std::int64_t steps);

 private:
  double lr_ = 0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<nd::Tensor<T>> m_, v_;
};

struct LedgerEntry {
  std::size_t record = 0;
  double loss = 0;
  bool subordinate = false;
};

struct EpochLedger {
  std::vector<LedgerEntry> entries;
  double mean_loss = 0;
};

/// One shuffled pass over every record. Each record contributes the summed
/// next-token loss over its 6-token sequence; the batch objective is the
/// mean over its records.
template <typename T>
EpochLedger train_epoch(model::Model<T>& model, Adam<T>& opt, const data::Dataset& ds, const TrainConfig& config,
                        int epoch);

/// Per-record summed next-token losses for a batch of records.
template <typename T>
std::vector<double> record_losses(const model::Model<T>& model, const data::Dataset& ds,
                                  const std::vector<std::size_t>& records);

}  // namespace phantom::dynamics
