#include "mv3d/model.hpp"

#include "mv3d/error.hpp"

namespace mv3d {

void ModelConfig::validate() const {
  vision.validate();
  text.validate();
  if (vision.proj_dim != text.proj_dim)
    throw ConfigError("vision and text projection widths differ (" + std::to_string(vision.proj_dim) + " vs " +
                      std::to_string(text.proj_dim) + ")");
}

namespace {

template <typename T>
VisionEncoder<T> make_vision(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  return VisionEncoder<T>(cfg.vision, rng);
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : config(cfg) {
  Rng rng(derive_seed(cfg.seed, 0x6d6f64656cULL));
  vision = make_vision<T>(cfg, rng);
  text = TextEncoder<T>(cfg.text, rng);
}

template <typename T>
ParamList<T> Model<T>::parameters() {
  ParamList<T> out;
  vision.collect(out, "vision");
  text.collect(out, "text");
  out.emplace_back("temperature.log_tau", &temperature.log_tau);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::parameters() const {
  auto mutable_list = const_cast<Model*>(this)->parameters();
  return {mutable_list.begin(), mutable_list.end()};
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : parameters()) t->zero_grad();
}

template struct Model<float>;
template struct Model<double>;

}  // namespace mv3d
