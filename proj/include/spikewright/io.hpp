#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spikewright/tensor.hpp"

namespace spikewright::io {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t value);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t load_u32(std::span<const std::uint8_t> bytes, std::size_t offset);
float load_f32(std::span<const std::uint8_t> bytes, std::size_t offset);

/// Raw frame file: width u32, height u32, then [3,H,W] little-endian float32.
std::vector<std::uint8_t> encode_rgb(const Tensor& rgb);
Tensor decode_rgb(std::span<const std::uint8_t> bytes);

}  // namespace spikewright::io
