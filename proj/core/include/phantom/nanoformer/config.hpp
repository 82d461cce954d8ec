#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>

#include "phantom/ndtensor/tensor.hpp"

namespace phantom::model {

/// Reserved token ids shared by the dataset generator and the model.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kPlaceholderId = 1;
inline constexpr std::int32_t kReservedIds = 2;

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_mlp = 256;
  int vocab_size = 512;
  int max_seq_len = 8;
  std::uint64_t seed = 0;
  nd::Precision precision = nd::Precision::f32;
  /// Heads read the residual stream through separate q/k/v slots; when
  /// false each head has one "in" slot.
  bool qkv_slots = true;

  int d_head() const { return n_heads > 0 ? d_model / n_heads : 0; }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  /// Closed-form parameter count.
  std::size_t parameter_count() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Desk-scale stand-ins for the model-size axis: S = 2x4x64, M = 4x4x128,
/// L = 6x8x256 (layers x heads x d_model), d_mlp = 4 d_model.
ModelConfig preset(const std::string& name, int vocab_size, std::uint64_t seed);

}  // namespace phantom::model
