#include "spikewright/scene.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "spikewright/error.hpp"
#include "spikewright/io.hpp"
#include "spikewright/parallel.hpp"

namespace spikewright::scene {

using nlohmann::json;

void WeatherProfile::validate() const {
  if (!(brightness > 0.0f && brightness <= 1.0f)) {
    throw std::invalid_argument("weather '" + name + "': brightness must lie in (0, 1]");
  }
  if (!(noise_std >= 0.0f)) throw std::invalid_argument("weather '" + name + "': noise std < 0");
  if (!(texture_contrast >= 0.0f && texture_contrast <= 0.45f)) {
    throw std::invalid_argument("weather '" + name + "': texture contrast must lie in [0, 0.45]");
  }
  if (!(jitter >= 0.0f)) throw std::invalid_argument("weather '" + name + "': jitter < 0");
}

std::vector<WeatherProfile> default_train_weather() {
  return {
      {"clear_noon", 1.0f, 0.004f, 0.30f, 0.5f},
      {"cloudy_noon", 0.8f, 0.006f, 0.25f, 0.5f},
      {"wet_noon", 0.7f, 0.008f, 0.35f, 1.0f},
      {"soft_rain_sunset", 0.55f, 0.010f, 0.20f, 1.0f},
  };
}

WeatherProfile default_ood_weather() { return {"hard_rain_night", 0.35f, 0.007f, 0.28f, 1.5f}; }

const char* label_name(Label label) { return label == Label::kDrive ? "drive" : "stop"; }

// ---------------------------------------------------------------------------

namespace {

bool in_disc(std::size_t x, std::size_t y, float cx, float cy, float r) {
  const float dx = static_cast<float>(x) - cx;
  const float dy = static_cast<float>(y) - cy;
  return dx * dx + dy * dy <= r * r;
}

}  // namespace

bool SceneConfig::in_red_lamp(std::size_t x, std::size_t y) const {
  return in_disc(x, y, light_x, light_y, lamp_radius);
}

bool SceneConfig::in_green_lamp(std::size_t x, std::size_t y) const {
  return in_disc(x, y, green_x(), green_y(), lamp_radius);
}

bool SceneConfig::in_housing(std::size_t x, std::size_t y) const {
  const float margin = lamp_radius + 2.0f;
  const auto fx = static_cast<float>(x), fy = static_cast<float>(y);
  return fx >= light_x - margin && fx <= light_x + margin && fy >= light_y - margin &&
         fy <= green_y() + margin;
}

void SceneConfig::validate() const {
  if (width < 2 || height < 2 || width % 2 != 0) {
    throw std::invalid_argument("scene width must be even and both dimensions >= 2");
  }
  if (width > 0xffff || height > 0xffff) throw std::invalid_argument("scene too large for DVS coordinates");
  if (lamp_radius < 2.0f) throw std::invalid_argument("lamp radius must be >= 2 px");
  const float margin = lamp_radius + 2.0f;
  const float half = static_cast<float>(width) / 2.0f;
  if (light_x - margin < half) {
    throw std::invalid_argument("traffic light must lie entirely in the right half of the image");
  }
  if (light_x + margin > static_cast<float>(width - 1) || light_y - margin < 0.0f ||
      green_y() + margin > static_cast<float>(height - 1)) {
    throw std::invalid_argument("traffic light extends beyond the image");
  }
  if (frame_interval_us == 0) throw std::invalid_argument("frame interval must be positive");
  if (!(contrast_threshold > 0.0)) throw std::invalid_argument("contrast threshold must be > 0");
  if (!(log_eps > 0.0)) throw std::invalid_argument("log epsilon must be > 0");
}

json to_json(const SceneConfig& c) {
  return json{{"width", c.width},
              {"height", c.height},
              {"light_x", c.light_x},
              {"light_y", c.light_y},
              {"lamp_radius", c.lamp_radius},
              {"texture_seed", c.texture_seed},
              {"scroll_px_per_frame", c.scroll_px_per_frame},
              {"frame_interval_us", c.frame_interval_us},
              {"contrast_threshold", c.contrast_threshold},
              {"log_eps", c.log_eps}};
}

SceneConfig scene_from_json(const json& j, SceneConfig base) {
  auto take = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("width", base.width);
  take("height", base.height);
  take("light_x", base.light_x);
  take("light_y", base.light_y);
  take("lamp_radius", base.lamp_radius);
  take("texture_seed", base.texture_seed);
  take("scroll_px_per_frame", base.scroll_px_per_frame);
  take("frame_interval_us", base.frame_interval_us);
  take("contrast_threshold", base.contrast_threshold);
  take("log_eps", base.log_eps);
  return base;
}

json to_json(const WeatherProfile& w) {
  return json{{"name", w.name},
              {"brightness", w.brightness},
              {"noise_std", w.noise_std},
              {"texture_contrast", w.texture_contrast},
              {"jitter", w.jitter}};
}

// ---------------------------------------------------------------------------

namespace {

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t key = static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull ^
                            static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4full;
  return static_cast<double>(mix64(seed ^ mix64(key)) >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double x, double y, double spacing, std::uint64_t seed) {
  const double fx = x / spacing, fy = y / spacing;
  const double x0 = std::floor(fx), y0 = std::floor(fy);
  const auto ix = static_cast<std::int64_t>(x0), iy = static_cast<std::int64_t>(y0);
  const double tx = smooth(fx - x0), ty = smooth(fy - y0);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

// Background texture in [0,1]: two octaves of value noise.
double texture(double x, double y, std::uint64_t seed) {
  return 0.65 * value_noise(x, y, 11.0, seed) + 0.35 * value_noise(x, y, 4.5, mix64(seed));
}

}  // namespace

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("luminance expects [3,H,W], got " + shape_to_string(rgb.shape()));
  }
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), plane = h * w;
  Tensor luma({h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    luma[i] = 255.0f * (0.299f * rgb[i] + 0.587f * rgb[plane + i] + 0.114f * rgb[2 * plane + i]);
  }
  return luma;
}

Frame render_frame(const SceneConfig& config, const WeatherProfile& weather, LightState state,
                   std::uint64_t time_us, Rng& rng) {
  config.validate();
  weather.validate();
  const std::size_t w = config.width, h = config.height, plane = w * h;
  const double phase = static_cast<double>(time_us) / static_cast<double>(config.frame_interval_us);
  const double jitter_x = rng.uniform(-1.0, 1.0) * weather.jitter;
  const double jitter_y = rng.uniform(-1.0, 1.0) * weather.jitter;
  const double shift_x = config.scroll_px_per_frame * phase + jitter_x;

  const Color& red = state == LightState::kRed ? config.red_lit : config.lamp_off;
  const Color& green = state == LightState::kGreen ? config.green_lit : config.lamp_off;

  Tensor rgb({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Color color;
      if (config.in_red_lamp(x, y)) {
        color = red;
      } else if (config.in_green_lamp(x, y)) {
        color = green;
      } else if (config.in_housing(x, y)) {
        color = config.housing;
      } else {
        const double tex = texture(static_cast<double>(x) + shift_x,
                                   static_cast<double>(y) + jitter_y, config.texture_seed);
        const auto g =
            static_cast<float>(0.45 + weather.texture_contrast * (2.0 * tex - 1.0));
        color = {g, g, g};
      }
      const auto noise = static_cast<float>(weather.noise_std * rng.normal());
      const std::size_t i = y * w + x;
      for (std::size_t c = 0; c < 3; ++c) {
        rgb[c * plane + i] = std::clamp(color[c] * weather.brightness + noise, 0.0f, 1.0f);
      }
    }
  }
  Frame frame{luminance(rgb), std::move(rgb)};
  return frame;
}

// ---------------------------------------------------------------------------

DvsReference DvsReference::from_luma(const Tensor& luma, double eps) {
  require_rank(luma, 2, "DvsReference");
  DvsReference ref{luma.dim(1), luma.dim(0), std::vector<double>(luma.numel())};
  for (std::size_t i = 0; i < luma.numel(); ++i) ref.log_ref[i] = std::log(luma[i] + eps);
  return ref;
}

std::vector<events::DvsEvent> dvs_between(const Tensor& prev_luma, const Tensor& cur_luma,
                                          DvsReference& reference, double contrast_threshold,
                                          double eps, std::uint32_t t0, std::uint32_t t1) {
  if (!(contrast_threshold > 0.0)) throw std::invalid_argument("dvs_between: C must be > 0");
  if (!(t0 < t1)) throw std::invalid_argument("dvs_between: t0 must precede t1");
  require_rank(cur_luma, 2, "dvs_between");
  require_same_shape(prev_luma, cur_luma, "dvs_between");
  if (reference.width != cur_luma.dim(1) || reference.height != cur_luma.dim(0)) {
    throw ShapeError("dvs_between: reference size does not match frames");
  }
  const std::size_t w = reference.width;
  const std::uint32_t span = t1 - t0;
  std::vector<events::DvsEvent> out;
  for (std::size_t i = 0; i < cur_luma.numel(); ++i) {
    const double cur = std::log(cur_luma[i] + eps);
    const double delta = cur - reference.log_ref[i];
    const auto crossings = static_cast<std::uint32_t>(std::floor(std::abs(delta) / contrast_threshold));
    if (crossings == 0) continue;
    const double sign = delta > 0.0 ? 1.0 : -1.0;
    const double prev = std::log(prev_luma[i] + eps);
    const double travel = cur - prev;
    for (std::uint32_t k = 1; k <= crossings; ++k) {
      const double level = reference.log_ref[i] + sign * k * contrast_threshold;
      double frac = travel != 0.0 ? (level - prev) / travel : 1.0;
      frac = std::clamp(frac, 0.0, 1.0);
      auto offset = static_cast<std::uint32_t>(std::ceil(frac * span));
      offset = std::clamp<std::uint32_t>(offset, 1, span);
      out.push_back({t0 + offset, static_cast<std::uint16_t>(i % w),
                     static_cast<std::uint16_t>(i / w),
                     sign > 0.0 ? events::Polarity::kOn : events::Polarity::kOff});
    }
    reference.log_ref[i] += sign * crossings * contrast_threshold;
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const events::DvsEvent& a, const events::DvsEvent& b) { return a.t < b.t; });
  return out;
}

std::pair<std::uint64_t, std::uint64_t> observation_window(const SceneConfig& config,
                                                           std::size_t observation) {
  const std::uint64_t dt = config.frame_interval_us;
  return {observation * dt + 1, (observation + 1) * dt + 1};
}

SequenceSample generate_sequence(const SceneConfig& config, const WeatherProfile& weather,
                                 Label label, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::uint32_t dt = config.frame_interval_us;
  const LightState last = label == Label::kDrive ? LightState::kGreen : LightState::kRed;
  const Frame prelude = render_frame(config, weather, LightState::kRed, 0, rng);
  Frame first = render_frame(config, weather, LightState::kRed, dt, rng);
  Frame second = render_frame(config, weather, last, 2ull * dt, rng);

  DvsReference ref = DvsReference::from_luma(prelude.luma, config.log_eps);
  std::vector<events::DvsEvent> all = dvs_between(prelude.luma, first.luma, ref,
                                                  config.contrast_threshold, config.log_eps, 0, dt);
  std::vector<events::DvsEvent> later = dvs_between(
      first.luma, second.luma, ref, config.contrast_threshold, config.log_eps, dt, 2 * dt);
  all.insert(all.end(), later.begin(), later.end());

  SequenceSample sample;
  sample.weather = weather.name;
  sample.label = label;
  sample.seed = seed;
  sample.rgb0 = std::move(first.rgb);
  sample.rgb1 = std::move(second.rgb);
  sample.events = events::EventStream(static_cast<std::uint16_t>(config.width),
                                      static_cast<std::uint16_t>(config.height), std::move(all));
  return sample;
}

SceneConfig sample_scene(const SceneConfig& base, std::uint64_t seed) {
  Rng rng(seed);
  SceneConfig c = base;
  c.lamp_radius = 3.0f + static_cast<float>(rng.below(2));
  const float margin = c.lamp_radius + 2.0f;
  const auto half = static_cast<std::int64_t>(c.width / 2);
  const auto m = static_cast<std::int64_t>(margin);
  const std::int64_t x_lo = half + m + 1;
  const std::int64_t x_hi = static_cast<std::int64_t>(c.width) - 2 - m;
  const std::int64_t y_lo = m + 1;
  const std::int64_t y_hi =
      static_cast<std::int64_t>(c.height) - 2 - m - static_cast<std::int64_t>(c.lamp_spacing());
  if (x_hi < x_lo || y_hi < y_lo) throw std::invalid_argument("scene too small for a traffic light");
  c.light_x = static_cast<float>(x_lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(x_hi - x_lo + 1))));
  c.light_y = static_cast<float>(y_lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(y_hi - y_lo + 1))));
  const double speed = rng.uniform(1.0, 3.0);
  c.scroll_px_per_frame = static_cast<float>(rng.below(2) ? speed : -speed);
  c.texture_seed = rng.next();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::size_t DatasetManifest::count(const std::string& split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

namespace {

struct Job {
  ManifestEntry entry;
  WeatherProfile weather;
};

std::string sequence_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "seq_" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

std::filesystem::path stem_path(const std::filesystem::path& dir, const ManifestEntry& e) {
  return dir / e.split / e.id;
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry e;
  e.split = j.at("split").get<std::string>();
  e.id = j.at("id").get<std::string>();
  e.label = j.at("label").get<int>() == 1 ? Label::kDrive : Label::kStop;
  e.weather = j.at("weather").get<std::string>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.num_events = j.at("num_events").get<std::size_t>();
  e.scene = scene_from_json(j.at("scene"));
  return e;
}

}  // namespace

DatasetManifest generate_dataset(const std::filesystem::path& out_dir, std::uint64_t master_seed,
                                 const DatasetOptions& options) {
  options.scene.validate();
  if (options.train_weather.empty()) throw std::invalid_argument("no training weather profiles");
  for (const auto& w : options.train_weather) w.validate();
  options.ood_weather.validate();

  std::error_code ec;
  for (const char* split : kSplitNames) {
    std::filesystem::create_directories(out_dir / split, ec);
    if (ec) throw DataError("cannot create " + (out_dir / split).string() + ": " + ec.message());
  }

  std::vector<Job> jobs;
  const std::size_t counts[] = {options.train_count, options.test_id_count, options.test_ood_count};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < counts[s]; ++i) {
      Job job;
      job.entry.split = kSplitNames[s];
      job.entry.id = sequence_id(i);
      job.entry.label = i % 2 == 0 ? Label::kStop : Label::kDrive;
      job.weather = s == 2 ? options.ood_weather
                           : options.train_weather[(i / 2) % options.train_weather.size()];
      job.entry.weather = job.weather.name;
      job.entry.seed = derive_seed(master_seed, (s + 1) * 1000003ull + i);
      jobs.push_back(std::move(job));
    }
  }

  struct Written {
    std::string dvsb, rgb0, rgb1;
  };
  std::vector<Written> hashes(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    try {
      ManifestEntry& e = jobs[j].entry;
      e.scene = sample_scene(options.scene, derive_seed(e.seed, 1));
      SequenceSample sample = generate_sequence(e.scene, jobs[j].weather, e.label, derive_seed(e.seed, 2));
      e.num_events = sample.events.size();
      const auto stem = stem_path(out_dir, e);
      const auto dvsb = events::encode(sample.events);
      const auto rgb0 = io::encode_rgb(sample.rgb0);
      const auto rgb1 = io::encode_rgb(sample.rgb1);
      io::write_bytes(stem.string() + ".dvsb", dvsb);
      io::write_bytes(stem.string() + ".rgb0", rgb0);
      io::write_bytes(stem.string() + ".rgb1", rgb1);
      hashes[j] = {io::hex64(io::fnv1a(dvsb)), io::hex64(io::fnv1a(rgb0)), io::hex64(io::fnv1a(rgb1))};
    } catch (...) {
      failures[j] = std::current_exception();
    }
  });
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  DatasetManifest manifest;
  json samples = json::array();
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const ManifestEntry& e = jobs[j].entry;
    samples.push_back(json{{"split", e.split},
                           {"id", e.id},
                           {"label", static_cast<int>(e.label)},
                           {"label_name", label_name(e.label)},
                           {"weather", e.weather},
                           {"seed", e.seed},
                           {"num_events", e.num_events},
                           {"scene", to_json(e.scene)},
                           {"fnv1a", {{"dvsb", hashes[j].dvsb}, {"rgb0", hashes[j].rgb0}, {"rgb1", hashes[j].rgb1}}}});
    manifest.entries.push_back(e);
  }
  json weathers = json::array();
  for (const auto& w : options.train_weather) weathers.push_back(to_json(w));
  manifest.json = json{{"format", "spikewright-dataset"},
                       {"version", 1},
                       {"master_seed", master_seed},
                       {"scene", to_json(options.scene)},
                       {"train_weather", weathers},
                       {"ood_weather", to_json(options.ood_weather)},
                       {"counts", {{"train", counts[0]}, {"test_id", counts[1]}, {"test_ood", counts[2]}}},
                       {"samples", samples}};
  manifest.text = manifest.json.dump(2) + "\n";
  manifest.hash = io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(manifest.text.data()),
                                      manifest.text.size()));
  io::write_text(out_dir / "manifest.json", manifest.text);
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DataError("no dataset manifest at " + path.string());
  const std::vector<std::uint8_t> bytes = io::read_bytes(path);
  DatasetManifest manifest;
  manifest.text.assign(bytes.begin(), bytes.end());
  manifest.hash = io::fnv1a(bytes);
  try {
    manifest.json = json::parse(manifest.text);
    for (const json& s : manifest.json.at("samples")) manifest.entries.push_back(entry_from_json(s));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  return manifest;
}

SceneConfig manifest_scene(const DatasetManifest& manifest) {
  return scene_from_json(manifest.json.at("scene"));
}

std::vector<LoadedSample> load_split(const std::filesystem::path& dir, const std::string& split) {
  const DatasetManifest manifest = load_manifest(dir);
  std::vector<LoadedSample> out;
  for (const ManifestEntry& e : manifest.entries) {
    if (e.split != split) continue;
    const auto stem = stem_path(dir, e).string();
    LoadedSample s;
    s.entry = e;
    try {
      s.events = events::read_dvsb(stem + ".dvsb");
      s.rgb0 = io::decode_rgb(io::read_bytes(stem + ".rgb0"));
      s.rgb1 = io::decode_rgb(io::read_bytes(stem + ".rgb1"));
    } catch (const DecodeError& err) {
      throw DataError("corrupt sample " + stem + ": " + err.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace spikewright::scene
