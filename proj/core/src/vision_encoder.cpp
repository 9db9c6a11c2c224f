#include "mv3d/vision_encoder.hpp"

#include "mv3d/error.hpp"

namespace mv3d {

Extent3 VisionEncoderConfig::grid() const {
  return {volume_shape[0] / patch_size[0], volume_shape[1] / patch_size[1], volume_shape[2] / patch_size[2]};
}

void VisionEncoderConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (patch_size[a] == 0 || volume_shape[a] == 0 || volume_shape[a] % patch_size[a] != 0)
      throw ConfigError("volume extent " + std::to_string(volume_shape[a]) + " on axis " + std::to_string(a) +
                        " is not divisible by patch extent " + std::to_string(patch_size[a]));
  }
  if (depth < 2) throw ConfigError("vision depth must be at least 2");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("vision embed_dim must be a positive multiple of heads");
  if (proj_dim == 0 || mlp_hidden == 0) throw ConfigError("vision proj_dim and mlp_hidden must be positive");
}

template <typename T>
VisionEncoder<T>::VisionEncoder(const VisionEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto e = cfg_.embed_dim;
  patch_proj_ = Linear<T>(cfg_.patch_voxels(), e, rng);
  pos_embed_ = normal_tensor<T>({cfg_.tokens(), e}, 0.02, rng);
  cls_token_ = normal_tensor<T>({1, e}, 0.02, rng);
  for (std::size_t i = 0; i < cfg_.depth; ++i) blocks_.emplace_back(e, cfg_.heads, cfg_.mlp_hidden, rng);
  norm_ = LayerNorm<T>(e);
  head_ = Linear<T>(e, cfg_.proj_dim, rng, false);
}

template <typename T>
void VisionEncoder<T>::check_volume(const Volume& volume) const {
  if (volume.shape != cfg_.volume_shape || volume.voxels.size() != extent_volume(volume.shape))
    throw DimensionError("volume shape does not match the encoder configuration");
}

template <typename T>
Tensor<T> VisionEncoder<T>::patchify(const Volume& volume) const {
  check_volume(volume);
  const auto g = cfg_.grid();
  const auto& p = cfg_.patch_size;
  Tensor<T> out({cfg_.tokens(), cfg_.patch_voxels()});
  std::size_t token = 0;
  for (std::size_t gz = 0; gz < g[0]; ++gz)
    for (std::size_t gy = 0; gy < g[1]; ++gy)
      for (std::size_t gx = 0; gx < g[2]; ++gx, ++token) {
        T* row = out.data().data() + token * cfg_.patch_voxels();
        std::size_t k = 0;
        for (std::size_t z = 0; z < p[0]; ++z)
          for (std::size_t y = 0; y < p[1]; ++y)
            for (std::size_t x = 0; x < p[2]; ++x)
              row[k++] = static_cast<T>(volume.at(gz * p[0] + z, gy * p[1] + y, gx * p[2] + x));
      }
  return out;
}

template <typename T>
std::vector<std::uint8_t> VisionEncoder<T>::downsample_mask(const RegionMask& mask) const {
  if (mask.shape != cfg_.volume_shape || mask.voxels.size() != extent_volume(mask.shape))
    throw DimensionError("mask shape does not match the encoder configuration");
  const auto g = cfg_.grid();
  const auto& p = cfg_.patch_size;
  const std::size_t half_twice = cfg_.patch_voxels();
  std::vector<std::uint8_t> cells(cfg_.tokens(), 0);
  std::size_t cell = 0;
  for (std::size_t gz = 0; gz < g[0]; ++gz)
    for (std::size_t gy = 0; gy < g[1]; ++gy)
      for (std::size_t gx = 0; gx < g[2]; ++gx, ++cell) {
        std::size_t count = 0;
        for (std::size_t z = 0; z < p[0]; ++z)
          for (std::size_t y = 0; y < p[1]; ++y)
            for (std::size_t x = 0; x < p[2]; ++x) count += mask.at(gz * p[0] + z, gy * p[1] + y, gx * p[2] + x) != 0;
        // mean >= 0.5  <=>  2 * count >= voxels per patch
        cells[cell] = 2 * count >= half_twice ? 1 : 0;
      }
  return cells;
}

template <typename T>
std::vector<std::size_t> VisionEncoder<T>::active_cells(const RegionMask& mask) const {
  auto cells = downsample_mask(mask);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i]) active.push_back(i);
  return active;
}

template <typename T>
Var<T> VisionEncoder<T>::patch_embed(Tape<T>& tape, std::span<const Volume* const> volumes,
                                     bool with_position) const {
  if (volumes.empty()) throw EmptyBatchError("patch_embed: no volumes");
  const std::size_t n = cfg_.tokens(), pv = cfg_.patch_voxels();
  std::vector<T> patches;
  patches.reserve(volumes.size() * n * pv);
  for (const auto* v : volumes) {
    auto p = patchify(*v);
    patches.insert(patches.end(), p.values().begin(), p.values().end());
  }
  auto x = patch_proj_(tape, tape.constant({volumes.size() * n, pv}, std::move(patches)));
  if (!with_position) return x;
  std::vector<std::size_t> pos_index(volumes.size() * n);
  for (std::size_t i = 0; i < pos_index.size(); ++i) pos_index[i] = i % n;
  return add(x, gather_rows(tape.param(pos_embed_), pos_index));
}

template <typename T>
Var<T> VisionEncoder<T>::latent(Tape<T>& tape, std::span<const Volume* const> volumes) const {
  auto x = patch_embed(tape, volumes);
  std::vector<std::size_t> lengths(volumes.size(), cfg_.tokens());
  const auto layout = AttentionLayout::self(lengths);
  for (std::size_t b = 0; b + 1 < blocks_.size(); ++b) x = blocks_[b](tape, x, layout);
  return x;
}

template <typename T>
Var<T> VisionEncoder<T>::pool(Tape<T>& tape, Var<T> latent_tokens, std::span<const TokenSelection> selections,
                              Var<T>* attention_node) const {
  if (selections.empty()) throw EmptyBatchError("pool: no selections");
  const std::size_t n = cfg_.tokens();
  const std::size_t batch = latent_tokens.rows() / n;
  const std::size_t cls_row = latent_tokens.rows();
  std::array<Var<T>, 2> parts{latent_tokens, tape.param(cls_token_)};
  auto table = concat_rows<T>(parts);

  std::vector<std::size_t> rows;
  std::vector<std::size_t> query_rows;
  AttentionLayout layout;
  layout.q_offsets.push_back(0);
  layout.kv_offsets.push_back(0);
  for (const auto& sel : selections) {
    if (sel.volume >= batch) throw DimensionError("pool: selection refers to volume outside the batch");
    if (sel.cells.empty()) throw EmptyRegionError("pool: selection has no active cells");
    query_rows.push_back(rows.size());
    rows.push_back(cls_row);
    for (auto c : sel.cells) {
      if (c >= n) throw DimensionError("pool: cell index out of range");
      rows.push_back(sel.volume * n + c);
    }
    layout.q_offsets.push_back(query_rows.size());
    layout.kv_offsets.push_back(rows.size());
  }
  auto tokens = gather_rows(table, rows);
  auto cls = blocks_.back().forward_rows(tape, tokens, query_rows, layout, attention_node);
  return l2_normalize(head_(tape, norm_(tape, cls)));
}

template <typename T>
Tensor<T> VisionEncoder<T>::encode_global(const Volume& volume) const {
  Tape<T> tape(false);
  const Volume* v[] = {&volume};
  auto lat = latent(tape, v);
  TokenSelection sel{0, {}};
  sel.cells.resize(cfg_.tokens());
  for (std::size_t i = 0; i < sel.cells.size(); ++i) sel.cells[i] = i;
  return reshape(pool(tape, lat, std::span(&sel, 1)), {cfg_.proj_dim}).to_tensor();
}

template <typename T>
Tensor<T> VisionEncoder<T>::encode_region(const Volume& volume, const RegionMask& mask) const {
  TokenSelection sel{0, active_cells(mask)};
  if (sel.cells.empty())
    throw EmptyRegionError("region " + std::to_string(mask.region_id) + " covers no patch cell");
  Tape<T> tape(false);
  const Volume* v[] = {&volume};
  auto lat = latent(tape, v);
  return reshape(pool(tape, lat, std::span(&sel, 1)), {cfg_.proj_dim}).to_tensor();
}

template <typename T>
void VisionEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) {
  patch_proj_.collect(out, prefix + ".patch_proj");
  out.emplace_back(prefix + ".pos_embed", &pos_embed_);
  out.emplace_back(prefix + ".cls_token", &cls_token_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  norm_.collect(out, prefix + ".norm");
  head_.collect(out, prefix + ".head");
}

template class VisionEncoder<float>;
template class VisionEncoder<double>;

}  // namespace mv3d
