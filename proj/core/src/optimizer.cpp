#include "mv3d/optimizer.hpp"

#include <cmath>

#include "mv3d/error.hpp"

namespace mv3d {

template <typename T>
void AdamW<T>::step(const ParamList<T>& params, double lr) {
  for (const auto& [name, p] : params) {
    if (!p->has_grad()) continue;
    for (T g : p->grad())
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (const auto& [name, p] : params) {
    auto it = moments_.find(name);
    if (it == moments_.end()) it = moments_.emplace(name, Moments{Tensor<T>(p->shape()), Tensor<T>(p->shape())}).first;
    auto& [m, v] = it->second;
    if (m.shape() != p->shape()) throw DimensionError("optimizer state for '" + name + "' has the wrong shape");
    std::span<const T> grad;
    if (p->has_grad()) grad = p->grad();
    auto& data = p->values();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
      const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double x = static_cast<double>(data[i]) * decay;
      x -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      data[i] = static_cast<T>(x);
    }
  }
}

template <typename T>
void AdamW<T>::restore(std::map<std::string, Moments> moments, std::size_t steps) {
  for (const auto& [name, mv] : moments)
    if (mv.m.shape() != mv.v.shape()) throw DimensionError("optimizer moments for '" + name + "' disagree in shape");
  moments_ = std::move(moments);
  steps_ = steps;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mv3d
