#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "spikewright/tensor.hpp"

namespace spikewright::events {

enum class Polarity : std::uint8_t { kOff = 0, kOn = 1 };

struct DvsEvent {
  std::uint32_t t = 0;  // microseconds since stream start
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity polarity = Polarity::kOff;

  bool operator==(const DvsEvent&) const = default;
};

/// Events of one sensor ordered by nondecreasing timestamp, all in bounds.
class EventStream {
 public:
  EventStream(std::uint16_t width, std::uint16_t height);
  /// Validates bounds and ordering; throws std::invalid_argument.
  EventStream(std::uint16_t width, std::uint16_t height, std::vector<DvsEvent> events);

  std::uint16_t width() const noexcept { return width_; }
  std::uint16_t height() const noexcept { return height_; }
  std::span<const DvsEvent> events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }

  void push_back(const DvsEvent& e);

  bool operator==(const EventStream&) const = default;

 private:
  void check(const DvsEvent& e) const;

  std::uint16_t width_;
  std::uint16_t height_;
  std::vector<DvsEvent> events_;
};

/// [2,H,W] frame: channel 0 counts ON events and channel 1 OFF events with
/// window_start <= t < window_end.
Tensor accumulate(const EventStream& stream, std::uint64_t window_start, std::uint64_t window_end);

// .dvsb layout, little-endian:
//   "DVSB" | version u8 = 1 | width u16 | height u16 | count u32
//   then count records of t u32, x u16, y u16, polarity u8.
inline constexpr std::size_t kHeaderBytes = 13;
inline constexpr std::size_t kRecordBytes = 9;
inline constexpr std::uint8_t kFormatVersion = 1;

std::vector<std::uint8_t> encode(const EventStream& stream);
/// Throws DecodeError naming the offending byte offset.
EventStream decode(std::span<const std::uint8_t> bytes);

void write_dvsb(const EventStream& stream, const std::filesystem::path& path);
EventStream read_dvsb(const std::filesystem::path& path);

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triplets

  std::array<std::uint8_t, 3> pixel(std::size_t x, std::size_t y) const {
    const std::size_t i = 3 * (y * width + x);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

/// Three-color rendering: ON-dominant blue, OFF-dominant red, no events
/// black. Ties go to blue.
RgbImage visualize(const Tensor& frame);

/// Binary PPM (P6).
void write_ppm(const RgbImage& image, const std::filesystem::path& path);

/// Fraction of pixels with at least one event of either polarity.
double sparsity(const Tensor& frame);

}  // namespace spikewright::events
