#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "spikewright/cli.hpp"
#include "spikewright/events.hpp"
#include "spikewright/io.hpp"
#include "spikewright/scene.hpp"

using namespace spikewright;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spikewright_cli_" + name);
  fs::remove_all(p);
  return p;
}

const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path p = scratch("data");
    REQUIRE(cli_run({"gen", "--out", p.string()}).code == 0);
    return p;
  }();
  return dir;
}

// Narrow networks keep training cases fast.
const fs::path& small_config() {
  static const fs::path path = [] {
    const fs::path p = fs::temp_directory_path() / "spikewright_cli_small.json";
    io::write_text(p, R"({"arch": {"channels": 8, "hidden": 16}})");
    return p;
  }();
  return path;
}

std::vector<std::uint8_t> ppm_pixels(const fs::path& path) {
  const auto bytes = io::read_bytes(path);
  std::size_t pos = 0;
  for (int newlines = 0; newlines < 3; ++pos) newlines += bytes[pos] == '\n';
  return {bytes.begin() + static_cast<long>(pos), bytes.end()};
}

}  // namespace

TEST_CASE("gen writes the default split sizes and a stable hash") {
  const Result r = cli_run({"gen", "--out", data_dir().string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("train 60 test_id 12 test_ood 18") != std::string::npos);
  const fs::path again = scratch("data_again");
  const Result r2 = cli_run({"gen", "--out", again.string()});
  CHECK(r2.out.substr(r2.out.find("hash")) == r.out.substr(r.out.find("hash")));
  fs::remove_all(again);
  CHECK(cli_run({"gen", "--out", "/proc/spikewright_denied"}).code != 0);
}

TEST_CASE("usage errors") {
  CHECK(cli_run({}).code == cli::kExitUsage);
  CHECK(cli_run({"train", "--data", "x"}).code == cli::kExitUsage);
  const Result r = cli_run({"train", "--data", data_dir().string(), "--network", "snn", "--modality",
                            "rgb", "--out", scratch("bad").string()});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("snn") != std::string::npos);
  CHECK(cli_run({"train", "--data", data_dir().string(), "--network", "mlp", "--modality", "dvs",
                 "--out", scratch("bad").string()})
            .code == cli::kExitUsage);
  CHECK(cli_run({"--help"}).code == 0);
}

TEST_CASE("train echoes the defaults and writes every artifact") {
  const fs::path out = scratch("train");
  const Result r = cli_run({"train", "--data", data_dir().string(), "--network", "cnn", "--modality",
                            "dvs", "--out", out.string(), "--epochs", "1", "--config",
                            small_config().string(), "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("lr=0.001 batch=12") != std::string::npos);
  CHECK(r.out.find("seed=42") != std::string::npos);
  for (const char* f : {"model.swm", "curves.csv", "curves.ppm", "run.json"}) {
    CHECK(fs::exists(out / f));
  }
  const auto bytes = io::read_bytes(out / "run.json");
  const json manifest = json::parse(bytes.begin(), bytes.end());
  CHECK(manifest.at("tool") == "spikewright");
  CHECK(manifest.at("config").at("batch") == 12);
  CHECK(manifest.contains("dataset_hash"));

  const Result ev = cli_run({"eval", "--checkpoint", (out / "model.swm").string(), "--data",
                             data_dir().string(), "--split", "all"});
  REQUIRE(ev.code == 0);
  CHECK(json::parse(ev.out).at("size") == 30);
  fs::remove_all(out);
}

TEST_CASE("a zero-initialized untrained model evaluates at chance") {
  const fs::path out = scratch("zero");
  REQUIRE(cli_run({"train", "--data", data_dir().string(), "--network", "snn", "--modality", "dvs",
                   "--out", out.string(), "--epochs", "0", "--init", "zero", "--config",
                   small_config().string()})
              .code == 0);
  const Result ev = cli_run({"eval", "--checkpoint", (out / "model.swm").string(), "--data",
                             data_dir().string(), "--split", "test_id"});
  REQUIRE(ev.code == 0);
  const json report = json::parse(ev.out);
  CHECK(report.at("accuracy") == 0.5);
  CHECK(report.at("size") == 12);
  CHECK(cli_run({"eval", "--checkpoint", (out / "missing.swm").string(), "--data",
                 data_dir().string()})
            .code != 0);
  fs::remove_all(out);
}

TEST_CASE("bench enforces thirty runs and writes text and json") {
  CHECK(cli_run({"bench", "--data", data_dir().string(), "--runs", "10"}).code == cli::kExitUsage);
  const fs::path out = scratch("bench");
  const Result r = cli_run({"bench", "--data", data_dir().string(), "--runs", "30", "--warmup", "1",
                            "--out", out.string(), "--config", small_config().string()});
  REQUIRE(r.code == 0);
  for (const char* m : {"SNN+DVS", "CNN+DVS", "CNN+RGB"}) CHECK(r.out.find(m) != std::string::npos);
  const auto bytes = io::read_bytes(out / "bench.json");
  CHECK(json::parse(bytes.begin(), bytes.end()).at("results").size() == 3);
  CHECK(fs::exists(out / "bench.txt"));
  fs::remove_all(out);
}

TEST_CASE("viz: empty stream is black, a drive sequence lights the lamp") {
  const fs::path dir = scratch("viz");
  fs::create_directories(dir);
  events::write_dvsb(events::EventStream(16, 8), dir / "empty.dvsb");
  REQUIRE(cli_run({"viz", "--input", (dir / "empty.dvsb").string(), "--out", (dir / "empty.ppm").string()})
              .code == 0);
  const auto black = ppm_pixels(dir / "empty.ppm");
  CHECK(black.size() == 16 * 8 * 3);
  CHECK(std::all_of(black.begin(), black.end(), [](std::uint8_t v) { return v == 0; }));

  const scene::DatasetManifest m = scene::load_manifest(data_dir());
  const scene::ManifestEntry* drive = nullptr;
  for (const auto& e : m.entries) {
    if (e.split == "test_id" && e.label == scene::Label::kDrive) {
      drive = &e;
      break;
    }
  }
  REQUIRE(drive != nullptr);
  const fs::path input = data_dir() / "test_id" / (drive->id + ".dvsb");
  REQUIRE(cli_run({"viz", "--input", input.string(), "--out", (dir / "drive.ppm").string()}).code == 0);
  const auto px = ppm_pixels(dir / "drive.ppm");
  const scene::SceneConfig& s = drive->scene;
  bool red_lamp_off = false, green_lamp_on = false;
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x) {
      const std::size_t i = 3 * (y * s.width + x);
      if (s.in_red_lamp(x, y) && px[i] == 255 && px[i + 2] == 0) red_lamp_off = true;
      if (s.in_green_lamp(x, y) && px[i] == 0 && px[i + 2] == 255) green_lamp_on = true;
    }
  CHECK(red_lamp_off);
  CHECK(green_lamp_on);

  io::write_text(dir / "bad.dvsb", "XVSB");
  const Result bad = cli_run({"viz", "--input", (dir / "bad.dvsb").string(), "--out", (dir / "bad.ppm").string()});
  CHECK(bad.code == cli::kExitData);
  CHECK(bad.err.find("offset 0") != std::string::npos);
  fs::remove_all(dir);
}
