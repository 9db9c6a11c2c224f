#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mv3d/error.hpp"
#include "mv3d/model.hpp"

using namespace mv3d;

namespace {

Volume random_volume(Extent3 shape, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(shape);
  for (auto& x : v.voxels) x = static_cast<float>(rng.normal());
  return v;
}

RegionMask full_mask(Extent3 shape) {
  RegionMask m(0, shape);
  std::fill(m.voxels.begin(), m.voxels.end(), 1);
  return m;
}

double linf(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST(VisionEncoder, FullMaskRegionEqualsGlobal) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<float> model(fixture::tiny_model(seed));
    const auto shape = model.config.vision.volume_shape;
    auto v = random_volume(shape, 100 + seed);
    auto g = model.vision.encode_global(v);
    auto r = model.vision.encode_region(v, full_mask(shape));
    EXPECT_LT(linf(g, r), 1e-5) << "seed " << seed;
  }
}

TEST(VisionEncoder, OutputsAreUnitNorm) {
  Model<float> model(fixture::tiny_model());
  auto g = model.vision.encode_global(random_volume(model.config.vision.volume_shape, 1));
  double n = 0;
  for (auto x : g.values()) n += double(x) * x;
  EXPECT_NEAR(n, 1.0, 1e-5);
}

TEST(VisionEncoder, PatchifyOrdersCellsZMajor) {
  Model<float> model(fixture::tiny_model());
  const auto& cfg = model.config.vision;
  Volume v(cfg.volume_shape);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i);
  auto p = model.vision.patchify(v);
  ASSERT_EQ(p.shape(), (Shape{cfg.tokens(), cfg.patch_voxels()}));
  // Cell 1 is (gz 0, gy 0, gx 1); its first voxel is (0, 0, 8).
  EXPECT_EQ(p.at(1, 0), v.at(0, 0, 8));
  // Cell 2 is (0, 1, 0); first voxel (0, 8, 0). Last voxel of cell 7 is the last voxel.
  EXPECT_EQ(p.at(2, 0), v.at(0, 8, 0));
  EXPECT_EQ(p.at(7, cfg.patch_voxels() - 1), v.voxels.back());
}

TEST(VisionEncoder, MaskCellActiveAtExactlyHalf) {
  Model<float> model(fixture::tiny_model());
  const auto& cfg = model.config.vision;
  RegionMask m(0, cfg.volume_shape);
  // Cell 0 spans z 0..3, y 0..7, x 0..7. Fill exactly half of it (z 0..1).
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) m.at(z, y, x) = 1;
  // Cell 1 one voxel short of half.
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 8; x < 16; ++x) m.at(z, y, x) = 1;
  m.at(0, 0, 8) = 0;
  auto cells = model.vision.downsample_mask(m);
  EXPECT_EQ(cells[0], 1);
  EXPECT_EQ(cells[1], 0);
  EXPECT_EQ(model.vision.active_cells(m), (std::vector<std::size_t>{0}));
}

TEST(VisionEncoder, EmptyRegionThrows) {
  Model<float> model(fixture::tiny_model());
  const auto shape = model.config.vision.volume_shape;
  RegionMask m(3, shape);
  m.at(0, 0, 0) = 1;
  EXPECT_THROW(model.vision.encode_region(random_volume(shape, 2), m), EmptyRegionError);
}

TEST(VisionEncoder, ShapeMismatchThrows) {
  Model<float> model(fixture::tiny_model());
  EXPECT_THROW(model.vision.encode_global(random_volume({8, 16, 8}, 3)), DimensionError);
  EXPECT_THROW(model.vision.downsample_mask(RegionMask(0, {4, 16, 16})), DimensionError);
}

TEST(VisionEncoder, RegionDependsOnlyOnItsCellsInFinalBlock) {
  // Two selections pooled in one pass equal the same selections pooled alone.
  Model<float> model(fixture::tiny_model());
  auto v = random_volume(model.config.vision.volume_shape, 4);
  const Volume* vp[] = {&v};
  Tape<float> tape(false);
  auto lat = model.vision.latent(tape, vp);
  std::vector<TokenSelection> both{{0, {0, 1, 4}}, {0, {2, 3, 5, 6, 7}}};
  auto joint = model.vision.pool(tape, lat, both);
  for (std::size_t s = 0; s < 2; ++s) {
    auto alone = model.vision.pool(tape, lat, std::span(&both[s], 1));
    for (std::size_t c = 0; c < alone.cols(); ++c)
      EXPECT_NEAR(joint.value()[s * alone.cols() + c], alone.value()[c], 1e-6);
  }
}

TEST(VisionEncoder, ConfigValidation) {
  VisionEncoderConfig cfg;
  cfg.patch_size = {5, 8, 8};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.depth = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TextEncoder, BatchMatchesSingleAndDedupIsExact) {
  Model<float> model(fixture::tiny_model());
  std::vector<TokenSeq> seqs{{1, 2, 3}, {4, 5}, {1, 2, 3}, {7}};
  Tape<float> tape(false);
  auto batch = model.text.encode(tape, seqs);
  const std::size_t d = batch.cols();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto one = model.text.encode_one(seqs[i]);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(batch.value()[i * d + c], one[c], 1e-6);
  }
  for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(batch.value()[c], batch.value()[2 * d + c]);
}

TEST(TextEncoder, TruncatesToMaxLen) {
  auto cfg = fixture::tiny_model();
  cfg.text.max_len = 4;
  Model<float> model(cfg);
  auto a = model.text.encode_one({1, 2, 3, 4, 5, 6});
  auto b = model.text.encode_one({1, 2, 3, 4, 9});
  EXPECT_EQ(a.values(), b.values());
}

TEST(TextEncoder, RejectsOutOfRangeTokens) {
  Model<float> model(fixture::tiny_model());
  EXPECT_THROW(model.text.encode_one({1, 64}), DimensionError);
}

TEST(Model, ParameterNamesAreUniqueAndStable) {
  Model<float> a(fixture::tiny_model(3)), b(fixture::tiny_model(3));
  auto pa = a.parameters();
  auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->values(), pb[i].second->values());
    EXPECT_TRUE(names.insert(pa[i].first).second) << pa[i].first;
  }
  Model<float> c(fixture::tiny_model(4));
  EXPECT_NE(c.parameters()[0].second->values(), pa[0].second->values());
}
