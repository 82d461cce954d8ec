#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phantom/nanoformer/model.hpp"

namespace phantom::model {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  nd::Tensor<float> value;
};

/// On-disk layout: 8-byte magic "PHNTCKPT", little-endian u64 header length,
/// JSON header {format_version, config, tensors: [{name, shape, offset,
/// count}], meta}, then the float32 little-endian arrays in header order.
/// Model parameters come first, followed by any extra tensors (optimizer
/// state). Round trips are bit-exact.
struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> extra;
  nlohmann::json meta = nlohmann::json::object();

  Model<float> model() const;
  const NamedTensor* find_extra(const std::string& name) const;
};

Checkpoint make_checkpoint(const Model<float>& model, std::vector<NamedTensor> extra = {},
                           nlohmann::json meta = nlohmann::json::object());

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on bad magic, unsupported version, truncation,
/// or a manifest that disagrees with the config.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace phantom::model
