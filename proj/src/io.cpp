#include "spikewright/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spikewright/error.hpp"

namespace spikewright::io {

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
  return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  append_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t load_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw DecodeError("truncated u32", offset);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

float load_f32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<float>(load_u32(bytes, offset));
}

std::vector<std::uint8_t> encode_rgb(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("encode_rgb expects [3,H,W], got " + shape_to_string(rgb.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * rgb.numel());
  append_u32(out, static_cast<std::uint32_t>(rgb.dim(2)));
  append_u32(out, static_cast<std::uint32_t>(rgb.dim(1)));
  for (float v : rgb.data()) append_f32(out, v);
  return out;
}

Tensor decode_rgb(std::span<const std::uint8_t> bytes) {
  const std::uint32_t width = load_u32(bytes, 0);
  const std::uint32_t height = load_u32(bytes, 4);
  if (width == 0 || height == 0) throw DecodeError("zero frame dimension", 0);
  const std::size_t count = 3ull * width * height;
  if (bytes.size() != 8 + 4 * count) {
    throw DecodeError("frame payload size mismatch", std::min(bytes.size(), 8 + 4 * count));
  }
  Tensor rgb({3, height, width});
  for (std::size_t i = 0; i < count; ++i) rgb[i] = load_f32(bytes, 8 + 4 * i);
  return rgb;
}

}  // namespace spikewright::io
