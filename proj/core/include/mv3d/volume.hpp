#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mv3d {

// (D, H, W) extents.
using Extent3 = std::array<std::size_t, 3>;

inline std::size_t extent_volume(const Extent3& e) { return e[0] * e[1] * e[2]; }

struct Volume {
  Extent3 shape{};
  std::vector<float> voxels;  // row-major over (z, y, x)

  Volume() = default;
  explicit Volume(Extent3 s, float fill = 0.0f) : shape(s), voxels(extent_volume(s), fill) {}

  float& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[(z * shape[1] + y) * shape[2] + x]; }
  float at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[(z * shape[1] + y) * shape[2] + x]; }
  friend bool operator==(const Volume&, const Volume&) = default;
};

struct RegionMask {
  int region_id = 0;
  Extent3 shape{};
  std::vector<std::uint8_t> voxels;  // values in {0, 1}

  RegionMask() = default;
  RegionMask(int id, Extent3 s) : region_id(id), shape(s), voxels(extent_volume(s), 0) {}

  std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[(z * shape[1] + y) * shape[2] + x]; }
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
    return voxels[(z * shape[1] + y) * shape[2] + x];
  }
  friend bool operator==(const RegionMask&, const RegionMask&) = default;
};

}  // namespace mv3d
