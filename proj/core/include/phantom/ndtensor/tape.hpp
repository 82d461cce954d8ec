#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "phantom/ndtensor/tensor.hpp"

namespace phantom::nd {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const { return *tape_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run computation record. Nodes are appended in evaluation order,
/// so a reverse sweep visits every node after all of its consumers.
///
/// A tape and the Vars pointing into it belong to one thread.
template <typename T>
class Tape {
 public:
  /// Backward rule of a node: reads this node's gradient, accumulates into
  /// its parents through accumulate().
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node; receives a gradient iff value.requires_grad().
  Var<T> leaf(Tensor<T> value);
  /// Leaf node that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Interior node. It requires a gradient iff any parent does.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  /// Gradient flowing into node `id` during backward.
  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Mutable gradient buffer of a parent; zero-initialised on first touch.
  Tensor<T>& accumulate(std::size_t id);

  /// Reverse sweep from a one-element loss. Clears gradients from any
  /// previous sweep first, so repeated sweeps give identical results.
  void backward(const Var<T>& loss);

  /// Gradient of the last backward sweep w.r.t. `v`; zeros when `v` was not
  /// reached.
  Tensor<T> grad(const Var<T>& v) const;
  bool has_grad(const Var<T>& v) const { return !nodes_[v.id()].grad.empty(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  // deque: references to values stay valid while new nodes are appended.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace phantom::nd
