#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "phantom/nanoformer/model.hpp"
#include "phantom/ndtensor/tape.hpp"

namespace phantom::model {

using TokenSeq = std::vector<std::int32_t>;

/// Everything one single-sequence forward pass wrote to the residual stream.
template <typename T>
struct ActivationTrace {
  TokenSeq tokens;
  /// Residual contribution of every non-logits node, [seq, d_model], by node id.
  std::vector<nd::Tensor<T>> outputs;
  /// Attention pattern of every head, [seq, seq], layer-major head index.
  std::vector<nd::Tensor<T>> attention;
  /// Residual stream after the embedding (index 0) and after each layer.
  std::vector<nd::Tensor<T>> residual;
  /// [seq, vocab]
  nd::Tensor<T> logits;

  std::size_t seq_len() const noexcept { return tokens.size(); }
  /// Final-position logits row.
  std::vector<T> final_logits() const;
};

template <typename T>
ActivationTrace<T> forward(const Model<T>& model, std::span<const std::int32_t> tokens);

/// Patched execution. Each child slot input is the sum of its parents'
/// contributions: clean edges carry the parent's output recomputed in this
/// run from the clean tokens, corrupt edges carry the parent's output from
/// `corrupt`. Returns the trace of the patched run.
template <typename T>
ActivationTrace<T> forward_patched(const Model<T>& model, const ActivationTrace<T>& clean,
                                   const ActivationTrace<T>& corrupt, const PatchPlan& plan);

/// Logit difference at the final position: logit(positive) - logit(negative).
struct LogitDiff {
  std::int32_t positive = 0;
  std::int32_t negative = 0;
};

template <typename T>
struct InterpolatedGradient {
  T metric = 0;
  /// dM / dA(node) at the interpolated activation, [seq, d_model].
  nd::Tensor<T> node_grad;
  /// dM / d(slot input) for every child slot, by Topology::slot_index.
  std::vector<nd::Tensor<T>> slot_grads;
};

/// Runs the clean sequence with `node`'s output replaced by
/// A_corrupt + alpha (A_clean - A_corrupt); everything downstream is
/// recomputed. Throws std::invalid_argument for alpha outside [0, 1].
template <typename T>
InterpolatedGradient<T> forward_interpolated(const Model<T>& model, const ActivationTrace<T>& clean,
                                             const ActivationTrace<T>& corrupt, T alpha, int node,
                                             LogitDiff metric);

/// Batched training pass over equal-length sequences. Returns per-row
/// next-token losses [batch * seq] on `tape`, with parameter leaves in
/// `param_vars` (requires_grad set) so the caller can read gradients.
template <typename T>
nd::Var<T> batch_losses(nd::Tape<T>& tape, const Model<T>& model, std::span<const std::int32_t> inputs,
                        std::span<const std::int32_t> targets, std::size_t batch, std::size_t seq,
                        std::vector<nd::Var<T>>& param_vars);

/// Final-position logits for a batch of equal-length prompts, [batch, vocab].
template <typename T>
nd::Tensor<T> batch_final_logits(const Model<T>& model, std::span<const std::int32_t> inputs, std::size_t batch,
                                 std::size_t seq);

/// Final layer norm and unembedding applied to residual rows [n, d_model]
/// -> [n, vocab]; the same kernels as the model's own output head.
template <typename T>
nd::Tensor<T> project_residual(const Model<T>& model, const nd::Tensor<T>& residual);

/// Greedy argmax; ties go to the lowest token id.
template <typename T>
std::int32_t argmax(std::span<const T> logits);

/// 0-based rank of `token` in descending-logit order; ties rank by id.
template <typename T>
std::size_t rank_of(std::span<const T> logits, std::int32_t token);

}  // namespace phantom::model
