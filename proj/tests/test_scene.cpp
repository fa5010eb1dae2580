#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "spikewright/error.hpp"
#include "spikewright/io.hpp"
#include "spikewright/scene.hpp"

using namespace spikewright;
using namespace spikewright::scene;
namespace fs = std::filesystem;

namespace {

WeatherProfile still(float brightness = 1.0f) { return {"still", brightness, 0.0f, 0.3f, 0.0f}; }

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spikewright_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("render is deterministic without noise or jitter") {
  const SceneConfig c;
  Rng a(1), b(2);
  const Frame f1 = render_frame(c, still(), LightState::kRed, 12345, a);
  const Frame f2 = render_frame(c, still(), LightState::kRed, 12345, b);
  CHECK(f1.rgb == f2.rgb);
  CHECK(f1.luma == f2.luma);
  CHECK(luminance(f1.rgb) == f1.luma);
}

TEST_CASE("lamp colors follow the light state") {
  const SceneConfig c;
  Rng rng(3);
  const Frame red = render_frame(c, still(), LightState::kRed, 0, rng);
  const Frame green = render_frame(c, still(), LightState::kGreen, 0, rng);
  const std::size_t plane = c.width * c.height;
  std::size_t red_px = 0, green_px = 0;
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) {
      const std::size_t i = y * c.width + x;
      if (c.in_red_lamp(x, y)) {
        CHECK(red.rgb[i] > red.rgb[plane + i]);
        ++red_px;
      }
      if (c.in_green_lamp(x, y)) {
        CHECK(green.rgb[plane + i] > green.rgb[i]);
        ++green_px;
      }
    }
  CHECK(red_px > 0);
  CHECK(green_px == red_px);
}

TEST_CASE("brightness scale 0.5 halves every luminance") {
  const SceneConfig c;
  Rng a(4), b(4);
  const Frame full = render_frame(c, still(1.0f), LightState::kGreen, 700, a);
  const Frame half = render_frame(c, still(0.5f), LightState::kGreen, 700, b);
  for (std::size_t i = 0; i < full.luma.numel(); ++i) {
    CHECK(half.luma[i] == doctest::Approx(0.5 * full.luma[i]).epsilon(1e-6));
  }
}

TEST_CASE("dvs model threshold arithmetic") {
  Tensor prev({1, 1}, 100.0f), cur({1, 1}, 200.0f);
  DvsReference ref = DvsReference::from_luma(prev, 1e-9);
  auto ev = dvs_between(prev, cur, ref, 0.15, 1e-9, 0, 1000);
  REQUIRE(ev.size() == 4);
  for (const auto& e : ev) {
    CHECK(e.polarity == events::Polarity::kOn);
    CHECK(e.t > 0);
    CHECK(e.t <= 1000);
  }
  CHECK(ref.log_ref[0] == doctest::Approx(std::log(100.0) + 4 * 0.15));

  Tensor down({1, 1}, 50.0f);
  ref = DvsReference::from_luma(prev, 1e-9);
  ev = dvs_between(prev, down, ref, 0.15, 1e-9, 0, 1000);
  REQUIRE(ev.size() == 4);
  for (const auto& e : ev) CHECK(e.polarity == events::Polarity::kOff);

  ref = DvsReference::from_luma(prev, 1.0);
  CHECK(dvs_between(prev, prev, ref, 0.15, 1.0, 0, 10).empty());
  CHECK_THROWS_AS(dvs_between(prev, cur, ref, 0.0, 1.0, 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(dvs_between(prev, cur, ref, 0.15, 1.0, 10, 10), std::invalid_argument);
}

TEST_CASE("dvs events per pixel equal floor(|dlog| / C) with the sign as polarity") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor prev = oracle::random_tensor({8, 9}, rng, 0, 255);
    const Tensor cur = oracle::random_tensor({8, 9}, rng, 0, 255);
    DvsReference ref = DvsReference::from_luma(prev, 1.0);
    const auto ev = dvs_between(prev, cur, ref, 0.15, 1.0, 100, 200);
    std::vector<int> on(72), off(72);
    for (std::size_t i = 1; i < ev.size(); ++i) CHECK(ev[i - 1].t <= ev[i].t);
    for (const auto& e : ev) (e.polarity == events::Polarity::kOn ? on : off)[e.y * 9 + e.x]++;
    for (std::size_t i = 0; i < 72; ++i) {
      const double d = std::log(cur[i] + 1.0) - std::log(prev[i] + 1.0);
      const int k = static_cast<int>(std::floor(std::abs(d) / 0.15));
      CHECK((d > 0 ? on[i] : off[i]) == k);
      CHECK((d > 0 ? off[i] : on[i]) == 0);
    }
  }
}

TEST_CASE("static lamp is silent, a changing lamp fires both polarities") {
  const SceneConfig c;
  WeatherProfile w = still();
  const SequenceSample stop = generate_sequence(c, w, Label::kStop, 9);
  for (const auto& e : stop.events.events()) CHECK_FALSE(c.in_lamp(e.x, e.y));

  const SequenceSample drive = generate_sequence(c, w, Label::kDrive, 9);
  std::size_t red_off = 0, green_on = 0, wrong = 0;
  for (const auto& e : drive.events.events()) {
    if (c.in_red_lamp(e.x, e.y)) (e.polarity == events::Polarity::kOff ? red_off : wrong)++;
    if (c.in_green_lamp(e.x, e.y)) (e.polarity == events::Polarity::kOn ? green_on : wrong)++;
  }
  CHECK(red_off > 0);
  CHECK(green_on > 0);
  CHECK(wrong == 0);
}

TEST_CASE("sequences are deterministic per seed and the labels set the second frame") {
  const SceneConfig c = sample_scene({}, 77);
  const WeatherProfile w = default_train_weather()[2];
  const SequenceSample a = generate_sequence(c, w, Label::kDrive, 5);
  const SequenceSample b = generate_sequence(c, w, Label::kDrive, 5);
  CHECK(events::encode(a.events) == events::encode(b.events));
  CHECK(a.rgb0 == b.rgb0);
  CHECK(a.rgb1 == b.rgb1);
  const SequenceSample other = generate_sequence(c, w, Label::kDrive, 6);
  CHECK_FALSE(other.rgb0 == a.rgb0);
}

TEST_CASE("sampled scenes keep every lamp and housing pixel in the right half") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const SceneConfig c = sample_scene({}, seed);
    CHECK(c.light_x >= c.width / 2.0f);
    CHECK(c.lamp_radius >= 2.0f);
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t x = 0; x < c.width / 2; ++x) CHECK_FALSE(c.in_housing(x, y));
  }
  SceneConfig bad;
  bad.light_x = 40.0f;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("scene json round trip") {
  const SceneConfig c = sample_scene({}, 3);
  const SceneConfig back = scene_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("weather profiles: OOD differs in brightness and noise from every training profile") {
  const WeatherProfile ood = default_ood_weather();
  const auto train = default_train_weather();
  CHECK(train.size() == 4);
  for (const WeatherProfile& w : train) {
    CHECK(w.brightness != ood.brightness);
    CHECK(w.noise_std != ood.noise_std);
    CHECK(w.name != ood.name);
  }
  WeatherProfile bad{"bad", 0.0f, 0.0f, 0.2f, 0.0f};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("dataset: counts, balance, right-half lamps and hash-identical regeneration") {
  const fs::path a = temp_dir("dataset_a"), b = temp_dir("dataset_b");
  const DatasetManifest m1 = generate_dataset(a, 42);
  const DatasetManifest m2 = generate_dataset(b, 42);
  CHECK(m1.count("train") == 60);
  CHECK(m1.count("test_id") == 12);
  CHECK(m1.count("test_ood") == 18);
  CHECK(m1.hash == m2.hash);
  CHECK(io::read_bytes(a / "manifest.json") == io::read_bytes(b / "manifest.json"));
  CHECK(io::read_bytes(a / "train" / "seq_017.dvsb") == io::read_bytes(b / "train" / "seq_017.dvsb"));

  for (const char* split : kSplitNames) {
    std::size_t drive = 0, total = 0;
    for (const ManifestEntry& e : m1.entries) {
      if (e.split != split) continue;
      ++total;
      drive += e.label == Label::kDrive;
      if (std::string(split) == "test_ood") CHECK(e.weather == default_ood_weather().name);
      else CHECK(e.weather != default_ood_weather().name);
      for (std::size_t y = 0; y < e.scene.height; ++y)
        for (std::size_t x = 0; x < e.scene.width; ++x)
          if (e.scene.in_lamp(x, y)) CHECK(x >= e.scene.width / 2);
    }
    CHECK(std::abs(static_cast<long>(2 * drive) - static_cast<long>(total)) <= 2);
  }

  const DatasetManifest loaded = load_manifest(a);
  CHECK(loaded.hash == m1.hash);
  const auto samples = load_split(a, "test_id");
  REQUIRE(samples.size() == 12);
  CHECK(samples[0].rgb0.shape() == Shape{3, 64, 128});
  CHECK(samples[0].events.size() == samples[0].entry.num_events);

  const DatasetManifest different = generate_dataset(b, 43);
  CHECK(different.hash != m1.hash);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("dataset errors") {
  CHECK_THROWS_AS(generate_dataset("/proc/spikewright_cannot_write", 1), DataError);
  CHECK_THROWS_AS(load_manifest(temp_dir("missing")), DataError);
}
