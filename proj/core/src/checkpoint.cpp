#include "mv3d/checkpoint.hpp"

#include <map>

#include "mv3d/binary_io.hpp"
#include "mv3d/error.hpp"

namespace mv3d {

namespace {

void put_tensor(ByteWriter& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) w.u64(e);
  w.f32s(t.data());
}

CheckpointHeader read_header(ByteReader& r) {
  r.expect_magic("MV3D", "checkpoint");
  CheckpointHeader h;
  const auto at = r.offset();
  h.version = r.u32();
  if (h.version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(h.version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      at);
  h.config_json = r.str();
  h.step = r.u64();
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state, const std::string& config_json) {
  ByteWriter w;
  w.magic("MV3D");
  w.u32(kCheckpointVersion);
  w.str(config_json);
  w.u64(state.step);

  const auto params = state.model.parameters();
  const auto& moments = state.optimizer.moments();
  w.u32(static_cast<std::uint32_t>(params.size() + 2 * moments.size()));
  for (const auto& [name, t] : params) put_tensor(w, name, *t);
  for (const auto& [name, mv] : moments) {
    put_tensor(w, "adam.m/" + name, mv.m);
    put_tensor(w, "adam.v/" + name, mv.v);
  }
  w.u64(state.optimizer.steps());

  const auto& bank = state.bank;
  w.u64(bank.capacity());
  w.u64(bank.dim());
  w.u8(bank.full_wrap() ? 1 : 0);
  w.u64(bank.ptr());
  w.u64(bank.filled());
  w.f32s(bank.storage());
  for (auto s : bank.stamps()) w.i64(s);

  w.str(state.rng.state());
  return w.take();
}

CheckpointHeader peek_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  return read_header(r);
}

void decode_checkpoint(std::span<const std::uint8_t> bytes, TrainState& state) {
  ByteReader r(bytes);
  const auto header = read_header(r);

  auto params = state.model.parameters();
  std::map<std::string, Tensor<float>*> by_name(params.begin(), params.end());
  std::map<std::string, Tensor<float>> loaded;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    auto name = r.str(4096);
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank), at);
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    std::size_t numel = 1;
    for (auto e : shape) {
      if (e == 0 || numel > (std::size_t{1} << 32) / e) throw FormatError("tensor '" + name + "' has bad extents", at);
      numel *= e;
    }
    auto data = r.f32s(numel);
    if (!loaded.emplace(name, Tensor<float>(shape, std::move(data))).second)
      throw FormatError("duplicate tensor '" + name + "'", at);
  }
  const auto adam_steps = r.u64();

  const auto bank_at = r.offset();
  const auto capacity = r.u64();
  const auto dim = r.u64();
  const bool full_wrap = r.u8() != 0;
  const auto ptr = r.u64();
  const auto filled = r.u64();
  if (capacity != state.bank.capacity() || dim != state.bank.dim() || full_wrap != state.bank.full_wrap())
    throw FormatError("bank geometry does not match the configuration", bank_at);
  auto store = r.f32s(capacity * dim);
  r.require(capacity, 8, "bank stamps");
  std::vector<std::int64_t> stamps(capacity);
  for (auto& s : stamps) s = r.i64();
  if (ptr >= capacity || filled > capacity) throw FormatError("bank pointer out of range", bank_at);
  const auto rng_at = r.offset();
  const auto rng_state = r.str();
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());

  // Validate everything before mutating the state.
  std::map<std::string, AdamW<float>::Moments> moments;
  for (auto& [name, t] : loaded) {
    if (name.starts_with("adam.")) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("unexpected tensor '" + name + "'", 0);
    if (it->second->shape() != t.shape()) throw FormatError("tensor '" + name + "' has the wrong shape", 0);
  }
  for (const auto& [name, p] : by_name) {
    if (!loaded.count(name)) throw FormatError("missing tensor '" + name + "'", 0);
    auto m = loaded.find("adam.m/" + name);
    auto v = loaded.find("adam.v/" + name);
    if ((m == loaded.end()) != (v == loaded.end()))
      throw FormatError("optimizer moments for '" + name + "' are incomplete", 0);
    if (m == loaded.end()) continue;
    if (m->second.shape() != p->shape() || v->second.shape() != p->shape())
      throw FormatError("optimizer moments for '" + name + "' have the wrong shape", 0);
    moments.emplace(name, AdamW<float>::Moments{m->second, v->second});
  }
  Rng rng;
  try {
    rng.set_state(rng_state);
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad rng state: ") + e.what(), rng_at);
  }

  for (auto& [name, p] : by_name) {
    const bool rg = p->requires_grad();
    *p = std::move(loaded.at(name));
    p->set_requires_grad(rg);
  }
  state.optimizer.restore(std::move(moments), adam_steps);
  state.bank.restore(std::move(store), ptr, filled, std::move(stamps));
  state.rng = rng;
  state.step = header.step;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const std::string& config_json) {
  write_file(path, encode_checkpoint(state, config_json));
}

}  // namespace mv3d
