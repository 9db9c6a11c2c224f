#pragma once

#include <map>
#include <string>

#include "mv3d/layers.hpp"

namespace mv3d {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Decoupled weight decay followed by the bias-corrected Adam update:
//   p <- p * (1 - lr * wd)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
class AdamW {
 public:
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
  };

  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const noexcept { return steps_; }

  // Reads each parameter's gradient buffer. Throws NumericError naming the first
  // parameter with a non-finite gradient, before touching any parameter.
  void step(const ParamList<T>& params, double lr);

  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::map<std::string, Moments> moments, std::size_t steps);

 private:
  AdamWConfig cfg_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mv3d
