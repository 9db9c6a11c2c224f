#include "mv3d/tensor.hpp"

#include <algorithm>

#include "mv3d/error.hpp"

namespace mv3d {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size())
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (!grad_) grad_.emplace(data_.size(), T{0});
  return *grad_;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> g) const {
  if (g.size() != data_.size())
    throw DimensionError("gradient of size " + std::to_string(g.size()) + " for tensor " + shape_str(shape_));
  auto dst = grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mv3d
