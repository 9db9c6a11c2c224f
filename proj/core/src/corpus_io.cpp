#include "mv3d/corpus_io.hpp"

#include "mv3d/binary_io.hpp"
#include "mv3d/config.hpp"
#include "mv3d/error.hpp"

namespace mv3d {

namespace {

void put_tokens(ByteWriter& w, const TokenSeq& seq) {
  w.u32(static_cast<std::uint32_t>(seq.size()));
  for (auto t : seq) w.u32(t);
}

TokenSeq get_tokens(ByteReader& r, std::size_t vocab_size) {
  const auto n = r.u32();
  r.require(n, 4, "token sequence");
  TokenSeq seq(n);
  for (auto& t : seq) {
    const auto at = r.offset();
    t = r.u32();
    if (t == 0 || t >= vocab_size) throw FormatError("token id " + std::to_string(t) + " is outside the vocabulary", at);
  }
  return seq;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const WorldConfig& world, const std::string& split,
                                         std::span<const PairedSample> samples) {
  const ReportLanguage language(world);
  const std::size_t voxels = extent_volume(world.volume_shape);
  ByteWriter w;
  w.magic("MV3C");
  w.u32(kCorpusVersion);
  w.str(world_to_json(world));
  const auto& words = language.vocabulary().words();
  w.u32(static_cast<std::uint32_t>(words.size()));
  for (const auto& word : words) w.str(word);
  w.str(split);
  w.u64(samples.size());
  for (const auto& s : samples) {
    if (s.volume.shape != world.volume_shape || s.masks.size() != world.regions)
      throw DimensionError("encode_dataset: sample does not match the world config");
    w.f32s(s.volume.voxels);
    w.u32(static_cast<std::uint32_t>(s.masks.size()));
    for (const auto& m : s.masks) {
      std::vector<std::uint8_t> packed((voxels + 7) / 8, 0);
      for (std::size_t i = 0; i < voxels; ++i)
        if (m.voxels[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      w.bytes(packed);
    }
    for (const auto& t : s.region_texts) put_tokens(w, t);
    put_tokens(w, s.report);
    for (const auto& t : s.enriched_region_texts) put_tokens(w, t);
    put_tokens(w, s.enriched_report);
    w.bytes(s.labels);
    w.u32(static_cast<std::uint32_t>(s.blobs.size()));
    for (const auto& b : s.blobs) {
      w.u32(static_cast<std::uint32_t>(b.region));
      w.u32(static_cast<std::uint32_t>(b.disease));
      for (auto c : b.center) w.u32(static_cast<std::uint32_t>(c));
      w.u32(static_cast<std::uint32_t>(b.radius));
    }
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MV3C", "corpus");
  const auto version_at = r.offset();
  const auto version = r.u32();
  if (version != kCorpusVersion)
    throw FormatError("corpus version " + std::to_string(version) + " is not supported", version_at);

  Dataset ds;
  const auto world_at = r.offset();
  try {
    ds.world = world_from_json(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad world config: ") + e.what(), world_at);
  }
  const auto vocab_at = r.offset();
  const auto n_words = r.u32();
  r.require(n_words, 4, "vocabulary");
  for (std::uint32_t i = 0; i < n_words; ++i) ds.vocabulary.push_back(r.str(256));
  const ReportLanguage language(ds.world);
  if (ds.vocabulary != language.vocabulary().words())
    throw FormatError("stored vocabulary does not match the world config", vocab_at);
  const std::size_t vocab_size = ds.vocabulary.size() + 1;
  ds.split = r.str(256);

  const auto& world = ds.world;
  const std::size_t voxels = extent_volume(world.volume_shape);
  const std::size_t regions = world.regions;
  const std::size_t labels = regions * world.diseases();
  const auto count = r.u64();
  // Each record holds at least its voxels; reject counts the file cannot hold.
  r.require(count, voxels * 4, "sample records");
  ds.samples.reserve(count);
  for (std::uint64_t n = 0; n < count; ++n) {
    PairedSample s;
    s.volume = Volume(world.volume_shape);
    s.volume.voxels = r.f32s(voxels);
    const auto masks_at = r.offset();
    if (r.u32() != regions) throw FormatError("sample " + std::to_string(n) + " has the wrong mask count", masks_at);
    for (std::size_t m = 0; m < regions; ++m) {
      RegionMask mask(static_cast<int>(m), world.volume_shape);
      auto packed = r.bytes((voxels + 7) / 8);
      for (std::size_t i = 0; i < voxels; ++i) mask.voxels[i] = (packed[i / 8] >> (i % 8)) & 1u;
      s.masks.push_back(std::move(mask));
    }
    for (std::size_t m = 0; m < regions; ++m) s.region_texts.push_back(get_tokens(r, vocab_size));
    s.report = get_tokens(r, vocab_size);
    for (std::size_t m = 0; m < regions; ++m) s.enriched_region_texts.push_back(get_tokens(r, vocab_size));
    s.enriched_report = get_tokens(r, vocab_size);
    const auto labels_at = r.offset();
    auto lb = r.bytes(labels);
    s.labels.assign(lb.begin(), lb.end());
    for (auto l : s.labels)
      if (l > 1) throw FormatError("label byte must be 0 or 1", labels_at);
    const auto n_blobs = r.u32();
    r.require(n_blobs, 24, "blob records");
    for (std::uint32_t b = 0; b < n_blobs; ++b) {
      const auto at = r.offset();
      PlantedBlob blob;
      blob.region = r.u32();
      blob.disease = r.u32();
      for (auto& c : blob.center) c = r.u32();
      blob.radius = r.u32();
      if (blob.region >= regions || blob.disease >= world.diseases())
        throw FormatError("blob refers to an unknown region or disease", at);
      s.blobs.push_back(blob);
    }
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after the last sample", r.offset());
  return ds;
}

void save_dataset(const std::filesystem::path& path, const WorldConfig& world, const std::string& split,
                  std::span<const PairedSample> samples) {
  write_file(path, encode_dataset(world, split, samples));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace mv3d
