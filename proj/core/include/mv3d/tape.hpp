#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mv3d/tensor.hpp"

namespace mv3d {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const;
  std::span<const T> value() const;
  std::size_t numel() const { return value().size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  T item() const;
  bool requires_grad() const;
  Tensor<T> to_tensor() const;
};

// Records operations in execution order. backward() walks the records in
// exact reverse order, so every node is visited after all of its consumers.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    const Tensor<T>* leaf = nullptr;
    bool requires_grad = false;
    // Saved forward intermediates (softmax probabilities, norms, ...).
    std::vector<T> aux;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(const Tensor<T>& t);
  Var<T> constant(Shape shape, std::vector<T> values);
  // Binds a parameter; repeated calls for the same tensor return the same node.
  Var<T> param(const Tensor<T>& t);

  // Records an op result. `backward` is dropped when no parent needs a gradient.
  Var<T> record(Shape shape, std::vector<T> value, std::vector<std::size_t> parents, BackwardFn backward,
                std::vector<T> aux = {});

  void backward(Var<T> root);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient buffer of a node, allocated on demand. Only valid inside backward.
  std::vector<T>& grad_of(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> params_;
  bool grad_enabled_;
};

extern template struct Var<float>;
extern template struct Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mv3d
