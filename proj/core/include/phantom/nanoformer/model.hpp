#pragma once

#include <string>
#include <vector>

#include "phantom/nanoformer/config.hpp"
#include "phantom/nanoformer/topology.hpp"
#include "phantom/ndtensor/tensor.hpp"

namespace phantom::model {

/// Index of each parameter inside Model::params().
struct HeadParams {
  std::size_t wq, bq, wk, bk, wv, bv, wo;
};

struct LayerParams {
  std::size_t ln1_g, ln1_b;
  std::vector<HeadParams> heads;
  std::size_t ln2_g, ln2_b;
  std::size_t w1, b1, w2, b2;
};

struct ParamLayout {
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<LayerParams> layers;
  std::size_t lnf_g = 0, lnf_b = 0, w_u = 0, b_u = 0;
};

/// Pre-LN decoder-only transformer. Each layer runs its attention heads and
/// then its MLP, both writing into the residual stream; the attention block
/// has no output bias so every residual write belongs to exactly one node.
///
/// Parameters are immutable during inference and may be shared across
/// threads; training mutates them through params() from a single writer.
template <typename T>
class Model {
 public:
  /// Seeded init: N(0, 0.02); residual projections (wo, w2) use
  /// 0.02 / sqrt(2 n_layers); biases 0, norm gains 1.
  explicit Model(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const Topology& topology() const noexcept { return topology_; }
  const ParamLayout& layout() const noexcept { return layout_; }

  std::vector<nd::Tensor<T>>& params() noexcept { return params_; }
  const std::vector<nd::Tensor<T>>& params() const noexcept { return params_; }
  const std::vector<std::string>& param_names() const noexcept { return names_; }
  const nd::Tensor<T>& param(std::size_t i) const { return params_.at(i); }

  std::size_t parameter_count() const;

  /// Test hook: zeroes the unembedding weight and bias.
  void zero_unembedding();

  /// Same architecture and weights in another precision.
  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  std::size_t add(std::string name, nd::Shape shape);

  ModelConfig config_;
  Topology topology_;
  ParamLayout layout_;
  std::vector<nd::Tensor<T>> params_;
  std::vector<std::string> names_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace phantom::model
