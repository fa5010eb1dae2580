#include "spikewright/events.hpp"

#include <fstream>
#include <iterator>
#include <string>

#include "spikewright/error.hpp"

namespace spikewright::events {

EventStream::EventStream(std::uint16_t width, std::uint16_t height)
    : width_(width), height_(height) {
  if (width == 0 || height == 0) throw std::invalid_argument("sensor size must be positive");
}

EventStream::EventStream(std::uint16_t width, std::uint16_t height, std::vector<DvsEvent> events)
    : EventStream(width, height) {
  events_.reserve(events.size());
  for (const DvsEvent& e : events) push_back(e);
}

void EventStream::check(const DvsEvent& e) const {
  if (e.x >= width_ || e.y >= height_) {
    throw std::invalid_argument("event at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                                ") outside " + std::to_string(width_) + "x" +
                                std::to_string(height_) + " sensor");
  }
  if (!events_.empty() && e.t < events_.back().t) {
    throw std::invalid_argument("event timestamps must be nondecreasing");
  }
  if (e.polarity != Polarity::kOn && e.polarity != Polarity::kOff) {
    throw std::invalid_argument("invalid event polarity");
  }
}

void EventStream::push_back(const DvsEvent& e) {
  check(e);
  events_.push_back(e);
}

Tensor accumulate(const EventStream& stream, std::uint64_t window_start,
                  std::uint64_t window_end) {
  if (window_start >= window_end) {
    throw std::invalid_argument("accumulate: window start must precede window end");
  }
  const std::size_t w = stream.width(), h = stream.height();
  Tensor frame({2, h, w});
  for (const DvsEvent& e : stream.events()) {
    if (e.t < window_start) continue;
    if (e.t >= window_end) break;
    const std::size_t channel = e.polarity == Polarity::kOn ? 0 : 1;
    frame[(channel * h + e.y) * w + e.x] += 1.0f;
  }
  return frame;
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw DecodeError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint16_t u16() {
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode(const EventStream& stream) {
  if (stream.size() > 0xffffffffu) throw std::invalid_argument("too many events for .dvsb");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + kRecordBytes * stream.size());
  for (char c : {'D', 'V', 'S', 'B'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kFormatVersion);
  put_u16(out, stream.width());
  put_u16(out, stream.height());
  put_u32(out, static_cast<std::uint32_t>(stream.size()));
  for (const DvsEvent& e : stream.events()) {
    put_u32(out, e.t);
    put_u16(out, e.x);
    put_u16(out, e.y);
    out.push_back(static_cast<std::uint8_t>(e.polarity));
  }
  return out;
}

EventStream decode(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.need(4, "magic");
  if (bytes[0] != 'D' || bytes[1] != 'V' || bytes[2] != 'S' || bytes[3] != 'B') {
    throw DecodeError("bad magic, expected \"DVSB\"", 0);
  }
  in.u32();
  in.need(1, "header");
  const std::uint8_t version = in.u8();
  if (version != kFormatVersion) {
    throw DecodeError("unsupported version " + std::to_string(version), 4);
  }
  in.need(8, "header");
  const std::uint16_t width = in.u16();
  const std::uint16_t height = in.u16();
  if (width == 0 || height == 0) throw DecodeError("zero sensor dimension", 5);
  const std::uint32_t count = in.u32();

  EventStream stream(width, height);
  std::uint32_t last_t = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record = in.offset();
    in.need(kRecordBytes, "event record");
    DvsEvent e;
    e.t = in.u32();
    e.x = in.u16();
    e.y = in.u16();
    const std::uint8_t pol = in.u8();
    if (pol > 1) throw DecodeError("polarity byte " + std::to_string(pol), record + 8);
    e.polarity = static_cast<Polarity>(pol);
    if (e.x >= width || e.y >= height) throw DecodeError("event out of sensor bounds", record);
    if (i > 0 && e.t < last_t) throw DecodeError("timestamp decreases", record);
    last_t = e.t;
    stream.push_back(e);
  }
  if (in.remaining() != 0) throw DecodeError("trailing bytes after last record", in.offset());
  return stream;
}

void write_dvsb(const EventStream& stream, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode(stream);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

EventStream read_dvsb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode(bytes);
}

// ---------------------------------------------------------------------------

RgbImage visualize(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 2) {
    throw ShapeError("visualize expects a [2,H,W] event frame, got " +
                     shape_to_string(frame.shape()));
  }
  RgbImage img{frame.dim(2), frame.dim(1), {}};
  const std::size_t plane = img.width * img.height;
  img.pixels.assign(3 * plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    const float on = frame[i], off = frame[plane + i];
    if (on == 0.0f && off == 0.0f) continue;
    if (on >= off) {
      img.pixels[3 * i + 2] = 255;
    } else {
      img.pixels[3 * i] = 255;
    }
  }
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

double sparsity(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 2) {
    throw ShapeError("sparsity expects a [2,H,W] event frame");
  }
  const std::size_t plane = frame.dim(1) * frame.dim(2);
  std::size_t active = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (frame[i] > 0.0f || frame[plane + i] > 0.0f) ++active;
  }
  return static_cast<double>(active) / static_cast<double>(plane);
}

}  // namespace spikewright::events
