#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mv3d {

// Little-endian serializer for the on-disk formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void magic(const char (&m)[5]) { bytes({reinterpret_cast<const std::uint8_t*>(m), 4}); }
  // u32 length followed by the raw characters.
  void str(const std::string& s);
  void f32s(std::span<const float> v);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; every failure is a FormatError carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32();
  double f64();
  std::span<const std::uint8_t> bytes(std::size_t n);
  void expect_magic(const char (&m)[5], const std::string& what);
  std::string str(std::size_t max_len = 1u << 24);
  std::vector<float> f32s(std::size_t n);
  // Throws unless n more items of `unit` bytes are available; guards allocations.
  void require(std::size_t n, std::size_t unit, const std::string& what) const;
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mv3d
