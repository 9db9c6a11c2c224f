#include <gtest/gtest.h>

#include "mv3d/config.hpp"
#include "mv3d/error.hpp"

using namespace mv3d;

namespace {

std::string error_of(const std::string& json) {
  try {
    parse_run_config(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  auto cfg = parse_run_config("{}");
  EXPECT_TRUE(cfg == RunConfig{});
  EXPECT_EQ(cfg.train.batch_size, 16u);
  EXPECT_EQ(cfg.train.steps, 2000u);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 5e-5);
  EXPECT_EQ(cfg.data.n_train, 1000u);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = parse_run_config(R"({
    "seed": 9,
    "world": {"regions": 2, "anomaly_prob": 0.4},
    "model": {"vision": {"depth": 3}, "text": {"heads": 2}},
    "train": {"mode": "local_only", "lr": 1e-4, "cross_region_negatives": true},
    "eval": {"retrieval_ks": [1, 5]}
  })");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.world.regions, 2u);
  EXPECT_EQ(cfg.model.vision.depth, 3u);
  EXPECT_EQ(cfg.train.mode, LossMode::local_only);
  EXPECT_TRUE(cfg.train.loss.cross_region_negatives);
  EXPECT_EQ(cfg.eval.retrieval_ks, (std::vector<std::size_t>{1, 5}));
  EXPECT_TRUE(parse_run_config(to_json(cfg)) == cfg);
  EXPECT_EQ(to_json(parse_run_config(to_json(cfg))), to_json(cfg));
}

TEST(Config, DerivedSeedsDifferPerComponent) {
  RunConfig cfg;
  cfg.seed = 4;
  EXPECT_NE(cfg.model_config().seed, cfg.train_config().seed);
  cfg.seed = 5;
  EXPECT_NE(cfg.model_config().seed, RunConfig{}.model_config().seed);
}

TEST(Config, ErrorsNameTheKeyPath) {
  EXPECT_NE(error_of(R"({"train": {"bogus": 1}})").find("train.bogus"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"lr": "fast"}})").find("train.lr"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"mode": "both"}})").find("both"), std::string::npos);
  EXPECT_NE(error_of(R"({"world": {"volume_shape": [16, 32]}})").find("world.volume_shape"), std::string::npos);
  EXPECT_FALSE(error_of(R"({"train": {"warmup_steps": 5000}})").empty());
  EXPECT_FALSE(error_of("[1, 2]").empty());
  EXPECT_FALSE(error_of("{not json").empty());
}

TEST(Config, ModelMustMatchWorld) {
  EXPECT_FALSE(error_of(R"({"world": {"volume_shape": [8, 16, 16]}})").empty());
  EXPECT_TRUE(error_of(R"({"world": {"volume_shape": [8, 16, 16],
                                     "blobs": [{"sigma": 1.0}, {"sigma": 0.8}, {"sigma": 1.0}]},
                           "model": {"vision": {"volume_shape": [8, 16, 16], "patch_size": [4, 8, 8]}}})")
                  .empty());
}

TEST(Config, WorldJsonRoundTrip) {
  WorldConfig w;
  w.anomaly_types = {"a", "b"};
  w.blobs = {{1.0, 2.0}, {1.5, 3.0}};
  EXPECT_TRUE(world_from_json(world_to_json(w)) == w);
}
