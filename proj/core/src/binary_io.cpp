#include "mv3d/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mv3d/error.hpp"

namespace mv3d {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

void ByteWriter::f32s(std::span<const float> v) {
  buf_.reserve(buf_.size() + 4 * v.size());
  for (float x : v) f32(x);
}

void ByteReader::fail(const std::string& what) const { throw FormatError(what, pos_); }

void ByteReader::require(std::size_t n, std::size_t unit, const std::string& what) const {
  if (unit != 0 && n > remaining() / unit) fail("truncated " + what);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  require(n, 1, "data");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return bytes(1)[0]; }
std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(bytes(4).data()); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(bytes(8).data()); }
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::expect_magic(const char (&m)[5], const std::string& what) {
  if (remaining() < 4) fail("file too short for " + what + " header");
  if (std::memcmp(data_.data() + pos_, m, 4) != 0) fail("bad magic, not a " + what + " file");
  pos_ += 4;
}

std::string ByteReader::str(std::size_t max_len) {
  const auto start = pos_;
  const auto n = u32();
  if (n > max_len) {
    pos_ = start;
    fail("string length " + std::to_string(n) + " exceeds limit");
  }
  auto b = bytes(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::vector<float> ByteReader::f32s(std::size_t n) {
  require(n, 4, "float array");
  std::vector<float> out(n);
  for (auto& x : out) x = f32();
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mv3d
