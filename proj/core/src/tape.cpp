#include "mv3d/tape.hpp"

#include <algorithm>

#include "mv3d/error.hpp"

namespace mv3d {

template <typename T>
const Shape& Var<T>::shape() const {
  return tape->node(id).shape;
}

template <typename T>
std::span<const T> Var<T>::value() const {
  return tape->node(id).value;
}

template <typename T>
std::size_t Var<T>::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

template <typename T>
std::size_t Var<T>::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

template <typename T>
T Var<T>::item() const {
  auto v = value();
  if (v.size() != 1) throw DimensionError("item() on value of shape " + shape_str(shape()));
  return v[0];
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->node(id).requires_grad;
}

template <typename T>
Tensor<T> Var<T>::to_tensor() const {
  const auto& n = tape->node(id);
  return Tensor<T>(n.shape, n.value);
}

template <typename T>
Var<T> Tape<T>::constant(const Tensor<T>& t) {
  return constant(t.shape(), t.values());
}

template <typename T>
Var<T> Tape<T>::constant(Shape shape, std::vector<T> values) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("constant of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                         " values");
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& t) {
  if (auto it = params_.find(&t); it != params_.end()) return {this, it->second};
  Node n;
  n.shape = t.shape();
  n.value = t.values();
  if (grad_enabled_ && t.requires_grad()) {
    n.leaf = &t;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  params_.emplace(&t, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> value, std::vector<std::size_t> parents, BackwardFn backward,
                       std::vector<T> aux) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.aux = std::move(aux);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](std::size_t p) { return nodes_[p].requires_grad; });
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
std::vector<T>& Tape<T>::grad_of(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{0});
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw ContractError("backward root belongs to a different tape");
  if (!root.shape().empty())
    throw ContractError("backward requires a 0-dimensional root, got shape " + shape_str(root.shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[root.id].requires_grad) return;
  grad_of(root.id)[0] = T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.leaf) {
      n.leaf->accumulate_grad(n.grad);
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

template struct Var<float>;
template struct Var<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace mv3d
