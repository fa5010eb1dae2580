#include "spikewright/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "spikewright/error.hpp"
#include "spikewright/events.hpp"
#include "spikewright/io.hpp"
#include "spikewright/models.hpp"
#include "spikewright/parallel.hpp"
#include "spikewright/scene.hpp"
#include "spikewright/train.hpp"

namespace spikewright::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Optional JSON overrides: {"scene": {...}, "arch": {...}, "dataset": {...}, "train": {...}}
json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw DataError("config " + path + " must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw DataError("malformed config " + path + ": " + e.what());
  }
}

const json& section(const json& config, const char* key) {
  static const json kEmpty = json::object();
  return config.contains(key) ? config.at(key) : kEmpty;
}

scene::DatasetOptions dataset_options(const json& config) {
  scene::DatasetOptions opts;
  opts.scene = scene::scene_from_json(section(config, "scene"), opts.scene);
  const json& d = section(config, "dataset");
  if (d.contains("train_count")) opts.train_count = d.at("train_count").get<std::size_t>();
  if (d.contains("test_id_count")) opts.test_id_count = d.at("test_id_count").get<std::size_t>();
  if (d.contains("test_ood_count")) opts.test_ood_count = d.at("test_ood_count").get<std::size_t>();
  return opts;
}

struct TrainFlags {
  std::string data, out, network = "snn", modality = "dvs", config, init = "kaiming";
  std::uint64_t seed = 42;
  std::size_t epochs = 100, batch = 12;
  double lr = 0.001;
  bool quiet = false;
};

// File values first, then any flag given on the command line.
train::ExperimentConfig experiment_from(const TrainFlags& f, const json& config,
                                        const std::function<bool(const char*)>& given) {
  train::ExperimentConfig c;
  const json& t = section(config, "train");
  c.network = models::parse_network(f.network);
  c.modality = models::parse_modality(f.modality);
  c.learning_rate = t.value("lr", c.learning_rate);
  c.batch_size = t.value("batch", c.batch_size);
  c.epochs = t.value("epochs", c.epochs);
  c.seed = t.value("seed", c.seed);
  if (given("--lr")) c.learning_rate = f.lr;
  if (given("--batch")) c.batch_size = f.batch;
  if (given("--epochs")) c.epochs = f.epochs;
  if (given("--seed")) c.seed = f.seed;
  c.arch = models::arch_from_json(section(config, "arch"));
  if (f.init == "zero") {
    c.init = models::Init::kZero;
  } else if (f.init != "kaiming") {
    throw std::invalid_argument("unknown init '" + f.init + "' (expected kaiming or zero)");
  }
  c.data_dir = f.data;
  c.out_dir = f.out;
  c.validate();
  return c;
}

json train_and_report(const train::ExperimentConfig& c, bool quiet, std::ostream& out) {
  out << "train " << models::to_string(c.network) << "+" << models::to_string(c.modality)
      << " lr=" << c.learning_rate << " batch=" << c.batch_size << " epochs=" << c.epochs
      << " seed=" << c.seed << "\n";
  const std::string started = utc_now();
  const train::TrainResult result = train::run_training(c, [&](const train::EpochRecord& r) {
    if (quiet) return;
    char line[160];
    std::snprintf(line, sizeof line,
                  "epoch %3zu  loss %.5f  train %.3f  overall %.3f  id %.3f  ood %.3f\n", r.epoch,
                  r.loss, r.train_acc, r.test_overall, r.test_id, r.test_ood);
    out << line << std::flush;
  });
  const train::EpochRecord last = result.records.empty() ? train::EpochRecord{} : result.records.back();
  json manifest{{"tool", "spikewright"},
                {"version", kToolVersion},
                {"config", train::to_json(c)},
                {"dataset_hash", io::hex64(scene::load_manifest(c.data_dir).hash)},
                {"outputs",
                 {{"checkpoint", result.checkpoint.string()},
                  {"curves_csv", result.curves_csv.string()},
                  {"curves_plot", result.curves_plot.string()}}},
                {"final",
                 {{"train_acc", last.train_acc},
                  {"test_overall", last.test_overall},
                  {"test_id", last.test_id},
                  {"test_ood", last.test_ood},
                  {"loss", last.loss}}},
                {"started_at", started},
                {"finished_at", utc_now()}};
  io::write_text(c.out_dir / "run.json", manifest.dump(2) + "\n");
  return manifest;
}

fs::path bench_outputs(const train::BenchReport& report, const std::string& out_dir,
                       std::ostream& out) {
  out << report.text();
  if (out_dir.empty()) {
    out << report.json().dump() << "\n";
    return {};
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());
  io::write_text(fs::path(out_dir) / "bench.txt", report.text());
  io::write_text(fs::path(out_dir) / "bench.json", report.json().dump(2) + "\n");
  return fs::path(out_dir) / "bench.json";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spiking and conventional stop-or-drive classifiers on synthetic DVS scenes",
               "spikewright"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // gen
  std::string gen_out, gen_config;
  std::uint64_t gen_seed = 42;
  CLI::App* gen = app.add_subcommand("gen", "Generate the synthetic dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--config", gen_config, "JSON overrides (scene, dataset)");

  // train
  TrainFlags tf;
  CLI::App* tr = app.add_subcommand("train", "Train one experiment configuration");
  tr->add_option("--data", tf.data, "Dataset directory")->required();
  tr->add_option("--network", tf.network, "snn or cnn")->required();
  tr->add_option("--modality", tf.modality, "dvs or rgb")->required();
  tr->add_option("--out", tf.out, "Output directory")->required();
  tr->add_option("--seed", tf.seed, "Training seed");
  tr->add_option("--epochs", tf.epochs, "Epochs");
  tr->add_option("--lr", tf.lr, "Learning rate");
  tr->add_option("--batch", tf.batch, "Batch size");
  tr->add_option("--init", tf.init, "kaiming or zero");
  tr->add_option("--config", tf.config, "JSON overrides (arch, train)");
  tr->add_flag("--quiet", tf.quiet, "No per-epoch progress");

  // eval
  std::string ev_ckpt, ev_data, ev_split = "all";
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train, test_id, test_ood or all")
      ->check(CLI::IsMember({"train", "test_id", "test_ood", "all"}));

  // bench
  std::string bn_data, bn_out, bn_config;
  std::size_t bn_runs = 30, bn_warmup = 5;
  std::uint64_t bn_seed = 42;
  CLI::App* bn = app.add_subcommand("bench", "Time single-sample inference for all three configurations");
  bn->add_option("--data", bn_data, "Dataset directory")->required();
  bn->add_option("--runs", bn_runs, "Timed runs per configuration (>= 30)");
  bn->add_option("--warmup", bn_warmup, "Untimed warmup runs");
  bn->add_option("--seed", bn_seed, "Model initialization seed");
  bn->add_option("--out", bn_out, "Directory for bench.txt and bench.json");
  bn->add_option("--config", bn_config, "JSON overrides (arch)");

  // viz
  std::string vz_in, vz_out;
  std::optional<std::uint64_t> vz_start, vz_end;
  CLI::App* vz = app.add_subcommand("viz", "Render a .dvsb stream as a PPM image");
  vz->add_option("--input", vz_in, "Event file")->required();
  vz->add_option("--out", vz_out, "Output PPM")->required();
  vz->add_option("--start", vz_start, "Window start in microseconds (inclusive)");
  vz->add_option("--end", vz_end, "Window end in microseconds (exclusive)");

  // run-all
  std::string ra_out, ra_config;
  std::uint64_t ra_seed = 42;
  std::size_t ra_epochs = 100, ra_runs = 30;
  bool ra_quiet = false;
  CLI::App* ra = app.add_subcommand("run-all", "Generate, train all three configurations and benchmark");
  ra->add_option("--out", ra_out, "Output directory")->required();
  ra->add_option("--seed", ra_seed, "Dataset and training seed");
  ra->add_option("--epochs", ra_epochs, "Epochs per configuration");
  ra->add_option("--runs", ra_runs, "Benchmark runs");
  ra->add_option("--config", ra_config, "JSON overrides");
  ra->add_flag("--quiet", ra_quiet, "No per-epoch progress");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_env();
    if (*gen) {
      const scene::DatasetOptions opts = dataset_options(read_config(gen_config));
      const scene::DatasetManifest m = scene::generate_dataset(gen_out, gen_seed, opts);
      out << "dataset " << gen_out << " hash " << io::hex64(m.hash) << " train "
          << m.count("train") << " test_id " << m.count("test_id") << " test_ood "
          << m.count("test_ood") << "\n";
    } else if (*tr) {
      const train::ExperimentConfig c = experiment_from(tf, read_config(tf.config), [&](const char* flag) { return tr->count(flag) > 0; });
      train_and_report(c, tf.quiet, out);
      out << "wrote " << (c.out_dir / "model.swm").string() << ", curves.csv, curves.ppm, run.json\n";
    } else if (*ev) {
      models::Classifier model = models::load_checkpoint(ev_ckpt);
      const std::size_t steps = model.arch().timesteps;
      train::PreparedSplit split;
      if (ev_split == "all") {
        split = train::load_prepared(ev_data, "test_id", model.modality(), steps);
        train::PreparedSplit ood = train::load_prepared(ev_data, "test_ood", model.modality(), steps);
        split.name = "all";
        split.inputs.insert(split.inputs.end(), ood.inputs.begin(), ood.inputs.end());
        split.labels.insert(split.labels.end(), ood.labels.begin(), ood.labels.end());
      } else {
        split = train::load_prepared(ev_data, ev_split, model.modality(), steps);
      }
      json report = train::to_json(train::evaluate(model, split));
      report["split"] = ev_split;
      report["network"] = models::to_string(model.kind());
      report["modality"] = models::to_string(model.modality());
      out << report.dump(2) << "\n";
    } else if (*bn) {
      const models::ArchConfig arch = models::arch_from_json(section(read_config(bn_config), "arch"));
      bench_outputs(train::run_benchmark(bn_data, bn_runs, bn_warmup, bn_seed, arch), bn_out, out);
    } else if (*vz) {
      const events::EventStream stream = events::read_dvsb(vz_in);
      std::uint64_t end = 1;
      for (const events::DvsEvent& e : stream.events()) end = std::max<std::uint64_t>(end, e.t + 1ull);
      const Tensor frame = events::accumulate(stream, vz_start.value_or(0), vz_end.value_or(end));
      events::write_ppm(events::visualize(frame), vz_out);
      out << "wrote " << vz_out << " (" << stream.size() << " events, sparsity "
          << events::sparsity(frame) << ")\n";
    } else if (*ra) {
      const json config = read_config(ra_config);
      const std::string started = utc_now();
      const fs::path root = ra_out;
      const fs::path data = root / "data";
      const scene::DatasetManifest m = scene::generate_dataset(data, ra_seed, dataset_options(config));
      out << "dataset " << data.string() << " hash " << io::hex64(m.hash) << "\n";
      json runs = json::object();
      const std::pair<const char*, const char*> combos[] = {
          {"snn", "dvs"}, {"cnn", "dvs"}, {"cnn", "rgb"}};
      for (const auto& [net, mod] : combos) {
        TrainFlags f;
        f.data = data.string();
        f.network = net;
        f.modality = mod;
        f.out = (root / (std::string(net) + "_" + mod)).string();
        f.seed = ra_seed;
        f.epochs = ra_epochs;
        const auto given = [&](const char* flag) {
          return std::string(flag) == "--seed" ? ra->count("--seed") > 0
                 : std::string(flag) == "--epochs" ? ra->count("--epochs") > 0
                                                   : false;
        };
        const train::ExperimentConfig c = experiment_from(f, config, given);
        runs[std::string(net) + "_" + mod] = train_and_report(c, ra_quiet, out);
      }
      const models::ArchConfig arch = models::arch_from_json(section(config, "arch"));
      const fs::path bench_json = bench_outputs(
          train::run_benchmark(data, ra_runs, 5, ra_seed, arch), (root / "bench").string(), out);
      const json manifest{{"tool", "spikewright"},
                          {"version", kToolVersion},
                          {"seed", ra_seed},
                          {"config", config},
                          {"dataset", data.string()},
                          {"dataset_hash", io::hex64(m.hash)},
                          {"experiments", runs},
                          {"bench", bench_json.string()},
                          {"started_at", started},
                          {"finished_at", utc_now()}};
      io::write_text(root / "run_manifest.json", manifest.dump(2) + "\n");
      out << "wrote " << (root / "run_manifest.json").string() << "\n";
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DecodeError& e) {
    err << "decode error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace spikewright::cli
