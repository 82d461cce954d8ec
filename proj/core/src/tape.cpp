#include "phantom/ndtensor/tape.hpp"

#include <stdexcept>

namespace phantom::nd {

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  const bool rg = value.requires_grad();
  nodes_.push_back(Node{std::move(value), {}, rg, {}, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
  bool rg = false;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw std::logic_error("Tape::record: parent id out of range");
    rg = rg || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg, std::move(parents), rg ? std::move(backward) : BackwardFn{}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::accumulate(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape(), T{0});
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
  if (loss.valid() && &loss.tape() != this) throw std::logic_error("backward: loss belongs to another tape");
  const auto& lv = nodes_.at(loss.id()).value;
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_[loss.id()].requires_grad) return;
  accumulate(loss.id())[0] = T{1};
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const auto& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor<T>(n.value.shape(), T{0});
  return n.grad;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace phantom::nd
