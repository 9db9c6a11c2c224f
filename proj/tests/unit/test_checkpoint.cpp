#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "mv3d/binary_io.hpp"
#include "mv3d/checkpoint.hpp"
#include "mv3d/error.hpp"

using namespace mv3d;

namespace {

const std::vector<PairedSample>& data() {
  static const auto d = generate_split(fixture::tiny_world(), kTrainStream, 30, 2);
  return d;
}

}  // namespace

TEST(Checkpoint, EncodeDecodeEncodeIsIdentical) {
  Trainer trainer(fixture::tiny_model(), fixture::tiny_train());
  for (int i = 0; i < 3; ++i) trainer.step(data());
  auto bytes = encode_checkpoint(trainer.state(), "{\"k\": 1}");
  TrainState restored(fixture::tiny_model(), fixture::tiny_train());
  decode_checkpoint(bytes, restored);
  EXPECT_EQ(encode_checkpoint(restored, "{\"k\": 1}"), bytes);
  EXPECT_EQ(restored.step, 3u);
  EXPECT_TRUE(restored.bank == trainer.state().bank);
  EXPECT_TRUE(restored.rng == trainer.state().rng);
  auto header = peek_checkpoint(bytes);
  EXPECT_EQ(header.version, kCheckpointVersion);
  EXPECT_EQ(header.step, 3u);
  EXPECT_EQ(header.config_json, "{\"k\": 1}");
}

TEST(Checkpoint, ResumeMatchesUninterruptedRunBitwise) {
  const std::size_t total = 8;
  for (std::size_t k : {0u, 1u, 4u, 7u}) {
    Trainer straight(fixture::tiny_model(), fixture::tiny_train());
    std::vector<LossBundle> expected;
    for (std::size_t s = 0; s < total; ++s) expected.push_back(straight.step(data()));

    Trainer first(fixture::tiny_model(), fixture::tiny_train());
    for (std::size_t s = 0; s < k; ++s) first.step(data());
    auto bytes = encode_checkpoint(first.state(), "cfg");

    Trainer resumed(fixture::tiny_model(), fixture::tiny_train());
    decode_checkpoint(bytes, resumed.state());
    for (std::size_t s = k; s < total; ++s) ASSERT_EQ(resumed.step(data()), expected[s]) << "k=" << k << " s=" << s;
    EXPECT_EQ(encode_checkpoint(resumed.state(), "cfg"), encode_checkpoint(straight.state(), "cfg"));
  }
}

TEST(Checkpoint, FileRoundTrip) {
  Trainer trainer(fixture::tiny_model(), fixture::tiny_train());
  trainer.step(data());
  const auto path = std::filesystem::temp_directory_path() / "mv3d_checkpoint_test.mv3d";
  save_checkpoint(path, trainer.state(), "cfg");
  auto bytes = read_file(path);
  EXPECT_EQ(bytes, encode_checkpoint(trainer.state(), "cfg"));
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsAFormatErrorWithOffset) {
  Trainer trainer(fixture::tiny_model(), fixture::tiny_train());
  trainer.step(data());
  auto bytes = encode_checkpoint(trainer.state(), "cfg");
  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 3, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    TrainState state(fixture::tiny_model(), fixture::tiny_train());
    try {
      decode_checkpoint(part, state);
      FAIL() << "cut " << cut;
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  Trainer trainer(fixture::tiny_model(), fixture::tiny_train());
  auto bytes = encode_checkpoint(trainer.state(), "cfg");
  bytes[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  try {
    peek_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, FailedDecodeLeavesStateUntouched) {
  Trainer small(fixture::tiny_model(), fixture::tiny_train());
  auto bytes = encode_checkpoint(small.state(), "cfg");
  auto other_cfg = fixture::tiny_model();
  other_cfg.vision.embed_dim = 32;
  TrainState other(other_cfg, fixture::tiny_train());
  auto before = encode_checkpoint(other, "cfg");
  EXPECT_THROW(decode_checkpoint(bytes, other), FormatError);
  EXPECT_EQ(encode_checkpoint(other, "cfg"), before);
}
