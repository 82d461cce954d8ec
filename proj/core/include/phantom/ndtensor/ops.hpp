#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phantom/ndtensor/tape.hpp"

// Differentiable primitives. Every op validates shapes up front and throws
// ShapeError naming the op and both shapes. No broadcasting except the
// trailing-axis bias in add_bias.
namespace phantom::nd {

inline constexpr double kLayerNormEps = 1e-5;

/// [m,k] x [k,n] -> [m,n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Batched: [B,m,k] x [B,k,n] -> [B,m,n]
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Var<T> transpose(const Var<T>& a);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

/// a[..., n] + bias[n]
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

/// Softmax over the last axis. -inf inputs map to exactly 0.
template <typename T>
Var<T> softmax(const Var<T>& a);

/// Normalises the last axis to zero mean / unit variance (eps 1e-5), then
/// applies gamma * x + beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta);

/// Rows of table[V,d] selected by ids -> [ids.size(), d]
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids);

/// Per-row cross-entropy of logits[N,V] against target ids -> [N].
/// A negative target marks an ignored row (loss 0, no gradient).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets);

/// Concatenation along `axis`; all other axes must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

/// Half-open range [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

/// tanh-approximated GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);

/// Sets entries above the diagonal of the trailing [t,t] block to -inf.
template <typename T>
Var<T> causal_mask(const Var<T>& scores);

/// Sum of all elements -> scalar.
template <typename T>
Var<T> sum(const Var<T>& a);

}  // namespace phantom::nd
