#pragma once

#include <cstdint>

#include "mv3d/losses.hpp"
#include "mv3d/text_encoder.hpp"
#include "mv3d/vision_encoder.hpp"

namespace mv3d {

struct ModelConfig {
  VisionEncoderConfig vision;
  TextEncoderConfig text;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Vision encoder, text encoder and the shared temperature.
template <typename T>
struct Model {
  ModelConfig config;
  VisionEncoder<T> vision;
  TextEncoder<T> text;
  Temperature<T> temperature;

  explicit Model(const ModelConfig& cfg);

  // Stable order; names are the checkpoint keys.
  ParamList<T> parameters();
  std::vector<std::pair<std::string, const Tensor<T>*>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();
};

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace mv3d
