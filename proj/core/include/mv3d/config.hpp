#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mv3d/corpus.hpp"
#include "mv3d/model.hpp"
#include "mv3d/trainer.hpp"

namespace mv3d {

struct DataConfig {
  std::size_t n_train = 1000;
  std::size_t n_test = 200;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
  std::vector<std::size_t> retrieval_ks{5, 10};
  std::vector<std::size_t> grounding_ks{10, 50};
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

// One file configures every command. Model and trainer seeds are derived from
// `seed`; the corpus has its own world.rng_seed so data can be shared across runs.
struct RunConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// JSON text -> config. Unknown keys, wrong types and invalid values throw
// ConfigError naming the offending key path. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Complete, canonical JSON echo; parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& cfg);

std::string world_to_json(const WorldConfig& cfg);
WorldConfig world_from_json(const std::string& json_text);

}  // namespace mv3d
