#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spikewright/events.hpp"
#include "spikewright/random.hpp"
#include "spikewright/tensor.hpp"

// Synthetic traffic-light scenes: brightness rendering, a log-intensity DVS
// model and the labeled double-frame dataset.
namespace spikewright::scene {

struct WeatherProfile {
  std::string name;
  float brightness = 1.0f;        // global scale in (0, 1]
  float noise_std = 0.0f;         // additive per-pixel noise, RGB units
  float texture_contrast = 0.3f;  // background texture amplitude
  float jitter = 0.0f;            // per-frame background jitter, pixels

  void validate() const;
};

/// Four profiles used for training and in-domain testing.
std::vector<WeatherProfile> default_train_weather();
/// Held-out profile for out-of-domain testing.
WeatherProfile default_ood_weather();

enum class LightState { kRed, kGreen };
enum class Label : std::uint8_t { kStop = 0, kDrive = 1 };

const char* label_name(Label label);

using Color = std::array<float, 3>;

struct SceneConfig {
  std::size_t width = 128;
  std::size_t height = 64;
  // Center of the red lamp. The green lamp sits lamp_spacing() pixels below.
  float light_x = 100.0f;
  float light_y = 16.0f;
  float lamp_radius = 3.0f;
  Color red_lit{1.0f, 0.15f, 0.1f};
  Color green_lit{0.1f, 1.0f, 0.4f};
  Color lamp_off{0.12f, 0.1f, 0.1f};
  Color housing{0.06f, 0.06f, 0.06f};
  std::uint64_t texture_seed = 1;
  float scroll_px_per_frame = 2.0f;  // signed horizontal background motion
  std::uint32_t frame_interval_us = 100000;
  double contrast_threshold = 0.15;
  double log_eps = 1.0;              // on the 0-255 luminance scale

  float green_x() const { return light_x; }
  float green_y() const { return light_y + lamp_spacing(); }
  float lamp_spacing() const { return 2.0f * lamp_radius + 2.0f; }

  bool in_red_lamp(std::size_t x, std::size_t y) const;
  bool in_green_lamp(std::size_t x, std::size_t y) const;
  bool in_lamp(std::size_t x, std::size_t y) const { return in_red_lamp(x, y) || in_green_lamp(x, y); }
  bool in_housing(std::size_t x, std::size_t y) const;

  /// Throws std::invalid_argument unless every lamp and housing pixel lies in
  /// the right half and inside the image.
  void validate() const;
};

nlohmann::json to_json(const SceneConfig& config);
/// Applies the keys present in `j` on top of `base`.
SceneConfig scene_from_json(const nlohmann::json& j, SceneConfig base = {});
nlohmann::json to_json(const WeatherProfile& weather);

struct Frame {
  Tensor luma;  // [H,W] on the 0-255 scale
  Tensor rgb;   // [3,H,W] in [0,1]
};

/// luma = 255 * (0.299 R + 0.587 G + 0.114 B)
Tensor luminance(const Tensor& rgb);

/// `time_us` sets the background scroll phase; rng supplies jitter and noise.
Frame render_frame(const SceneConfig& config, const WeatherProfile& weather, LightState state,
                   std::uint64_t time_us, Rng& rng);

/// Per-pixel log-intensity reference of the DVS model.
struct DvsReference {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> log_ref;

  static DvsReference from_luma(const Tensor& luma, double eps);
};

/// For each pixel with d = ln(cur + eps) - ln(ref + eps), emits
/// floor(|d| / C) events of polarity sign(d) at timestamps interpolated in
/// (t0, t1], and moves the reference by the emitted crossings. Events are
/// returned sorted by (t, y, x).
std::vector<events::DvsEvent> dvs_between(const Tensor& prev_luma, const Tensor& cur_luma,
                                          DvsReference& reference, double contrast_threshold,
                                          double eps, std::uint32_t t0, std::uint32_t t1);

struct SequenceSample {
  std::string id;
  std::string weather;
  Label label = Label::kStop;
  std::uint64_t seed = 0;
  Tensor rgb0;  // first observation
  Tensor rgb1;  // second observation
  events::EventStream events{1, 1};
};

/// Event window [start, end) belonging to observation 0 or 1. Observation i
/// collects the events emitted on the way from frame i to frame i+1, i.e.
/// timestamps in (i * interval, (i+1) * interval].
std::pair<std::uint64_t, std::uint64_t> observation_window(const SceneConfig& config,
                                                           std::size_t observation);

/// Renders a prelude frame, then the two observations. The light is red in
/// the first two frames and green in the last iff label is kDrive.
SequenceSample generate_sequence(const SceneConfig& config, const WeatherProfile& weather,
                                 Label label, std::uint64_t seed);

/// Draws lamp placement, radius, texture seed and scroll speed for one
/// sequence; `base` supplies the sensor geometry and DVS settings.
SceneConfig sample_scene(const SceneConfig& base, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset on disk:
//   out_dir/{train,test_id,test_ood}/seq_<id>.{dvsb,rgb0,rgb1} + manifest.json

inline constexpr const char* kSplitNames[] = {"train", "test_id", "test_ood"};

struct DatasetOptions {
  SceneConfig scene;
  std::vector<WeatherProfile> train_weather = default_train_weather();
  WeatherProfile ood_weather = default_ood_weather();
  std::size_t train_count = 60;
  std::size_t test_id_count = 12;
  std::size_t test_ood_count = 18;
};

struct ManifestEntry {
  std::string split;
  std::string id;
  Label label = Label::kStop;
  std::string weather;
  std::uint64_t seed = 0;
  std::size_t num_events = 0;
  SceneConfig scene;  // per-sequence lamp placement and motion
};

struct DatasetManifest {
  nlohmann::json json;
  std::string text;  // exact bytes written to manifest.json
  std::uint64_t hash = 0;
  std::vector<ManifestEntry> entries;

  std::size_t count(const std::string& split) const;
};

/// Generates every sequence and writes it with the manifest. Throws
/// DataError when the directory cannot be created or written.
DatasetManifest generate_dataset(const std::filesystem::path& out_dir, std::uint64_t master_seed,
                                 const DatasetOptions& options = {});

DatasetManifest load_manifest(const std::filesystem::path& dir);

struct LoadedSample {
  ManifestEntry entry;
  Tensor rgb0;
  Tensor rgb1;
  events::EventStream events{1, 1};
};

std::vector<LoadedSample> load_split(const std::filesystem::path& dir, const std::string& split);

/// Scene settings recorded in a dataset manifest (geometry, DVS settings).
SceneConfig manifest_scene(const DatasetManifest& manifest);

}  // namespace spikewright::scene
