#include "spikewright/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "spikewright/error.hpp"
#include "spikewright/events.hpp"
#include "spikewright/io.hpp"
#include "spikewright/layers.hpp"
#include "spikewright/random.hpp"

namespace spikewright::train {

using nlohmann::json;
using models::Classifier;
using models::Modality;
using models::NetworkKind;

void ExperimentConfig::validate() const {
  if (network == NetworkKind::kSnn && modality == Modality::kRgb) {
    throw std::invalid_argument(
        "snn+rgb is not a supported experiment: the spiking network consumes DVS events "
        "(use snn+dvs, cnn+dvs or cnn+rgb)");
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be positive");
  }
}

json to_json(const ExperimentConfig& c) {
  models::ArchConfig arch = c.arch;
  arch.input_channels = models::channels_for(c.modality);
  return json{{"network", models::to_string(c.network)},
              {"modality", models::to_string(c.modality)},
              {"lr", c.learning_rate},
              {"batch", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"init", c.init == models::Init::kZero ? "zero" : "kaiming"},
              {"data", c.data_dir.string()},
              {"out", c.out_dir.string()},
              {"arch", models::to_json(arch)}};
}

// ---------------------------------------------------------------------------

json to_json(const EvalReport& r) {
  return json{{"size", r.size},
              {"correct", r.correct},
              {"accuracy", r.accuracy},
              {"confusion",
               {{r.confusion[0][0], r.confusion[0][1]}, {r.confusion[1][0], r.confusion[1][1]}}},
              {"precision", r.precision},
              {"recall", r.recall},
              {"f1", r.f1}};
}

EvalReport report_from_predictions(std::span<const scene::Label> actual,
                                   std::span<const scene::Label> predicted) {
  if (actual.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  if (actual.size() != predicted.size()) {
    throw std::invalid_argument("prediction count does not match label count");
  }
  EvalReport r;
  r.size = actual.size();
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(actual[i])][static_cast<std::size_t>(predicted[i])];
  }
  r.correct = r.confusion[0][0] + r.confusion[1][1];
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.size);
  const double tp = static_cast<double>(r.confusion[1][1]);
  const double fp = static_cast<double>(r.confusion[0][1]);
  const double fn = static_cast<double>(r.confusion[1][0]);
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

double overall_accuracy(const EvalReport& a, const EvalReport& b) {
  return static_cast<double>(a.correct + b.correct) / static_cast<double>(a.size + b.size);
}

PreparedSplit prepare_split(const std::string& name, std::span<const scene::LoadedSample> samples,
                            Modality modality, std::size_t timesteps) {
  PreparedSplit out;
  out.name = name;
  for (const scene::LoadedSample& s : samples) {
    out.inputs.push_back(models::prepare_input(s, modality, s.entry.scene, timesteps));
    out.labels.push_back(s.entry.label);
  }
  return out;
}

PreparedSplit load_prepared(const std::filesystem::path& data_dir, const std::string& split,
                            Modality modality, std::size_t timesteps) {
  const std::vector<scene::LoadedSample> samples = scene::load_split(data_dir, split);
  if (samples.empty()) throw DataError("split '" + split + "' is empty in " + data_dir.string());
  return prepare_split(split, samples, modality, timesteps);
}

namespace {

constexpr std::size_t kEvalChunk = 16;

Tensor gather(const std::vector<Tensor>& inputs, std::span<const std::size_t> order) {
  std::vector<Tensor> picked;
  picked.reserve(order.size());
  for (std::size_t i : order) picked.push_back(inputs[i]);
  return models::stack(picked);
}

}  // namespace

std::vector<scene::Label> predict_split(Classifier& model, const PreparedSplit& split) {
  const nn::Mode previous = model.mode();
  model.set_mode(nn::Mode::kEval);
  std::vector<scene::Label> out;
  out.reserve(split.size());
  std::vector<std::size_t> idx(split.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t begin = 0; begin < split.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(split.size(), begin + kEvalChunk);
    const Tensor batch = gather(split.inputs, std::span(idx).subspan(begin, end - begin));
    ad::Tape tape(false);
    model.reset_state();
    const Tensor scores = models::forward(tape, model, batch).value();
    const std::size_t classes = scores.dim(1);
    for (std::size_t r = 0; r < end - begin; ++r) {
      out.push_back(models::predict(scores.data().subspan(r * classes, classes)));
    }
  }
  model.reset_state();
  model.set_mode(previous);
  return out;
}

EvalReport evaluate(Classifier& model, const PreparedSplit& split) {
  if (split.size() == 0) throw std::invalid_argument("cannot evaluate an empty split");
  const std::vector<scene::Label> predicted = predict_split(model, split);
  return report_from_predictions(split.labels, predicted);
}

// ---------------------------------------------------------------------------

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamOptions& o) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], state.m[i], "adam_step");
    if (grads[i] != nullptr) require_same_shape(*params[i], *grads[i], "adam_step");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i] != nullptr ? (*grads[i])[j] : 0.0;
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] = static_cast<float>(p[j] - o.lr * (mj / c1) / (std::sqrt(vj / c2) + o.eps));
    }
  }
}

void adam_step(std::span<const models::NamedVariable> params, AdamState& state,
               const AdamOptions& options) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (const models::NamedVariable& p : params) {
    ad::Variable var = p.var;
    values.push_back(&var.mutable_value());
    grads.push_back(var.has_grad() ? &var.grad() : nullptr);
  }
  adam_step(values, grads, state, options);
}

// ---------------------------------------------------------------------------

namespace {

Tensor one_hot(std::span<const scene::Label> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return t;
}

}  // namespace

TrainResult run_training(const ExperimentConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  models::ArchConfig arch = config.arch;
  arch.input_channels = models::channels_for(config.modality);

  const PreparedSplit train_split =
      load_prepared(config.data_dir, "train", config.modality, arch.timesteps);
  const PreparedSplit test_id = load_prepared(config.data_dir, "test_id", config.modality, arch.timesteps);
  const PreparedSplit test_ood =
      load_prepared(config.data_dir, "test_ood", config.modality, arch.timesteps);
  if (config.batch_size > train_split.size()) {
    throw std::invalid_argument("batch size " + std::to_string(config.batch_size) +
                                " exceeds the " + std::to_string(train_split.size()) +
                                " training samples");
  }

  Classifier model(config.network, config.modality, arch, derive_seed(config.seed, 1), config.init);
  std::vector<models::NamedVariable> params = model.parameters();
  AdamState adam;
  const AdamOptions options{config.learning_rate};
  const bool spiking = config.network == NetworkKind::kSnn;

  std::vector<EpochRecord> records;
  std::vector<std::size_t> order(train_split.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, 0x5eed0000ull + epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle.below(i + 1)]);
    }

    model.set_mode(nn::Mode::kTrain);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> picked = std::span(order).subspan(begin, end - begin);
      std::vector<scene::Label> labels;
      for (std::size_t i : picked) labels.push_back(train_split.labels[i]);
      const Tensor batch = gather(train_split.inputs, picked);
      const Tensor target = one_hot(labels, arch.classes);

      ad::Tape tape;
      model.reset_state();
      const ad::Variable scores = models::forward(tape, model, batch);
      const ad::Variable loss =
          spiking ? nn::mse_loss(tape, scores, target) : nn::bce_loss(tape, scores, target);
      const float value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch starting at " + std::to_string(begin));
      }
      tape.backward(loss);
      adam_step(params, adam, options);
      model.clamp_time_constants();
      loss_sum += static_cast<double>(value) * static_cast<double>(picked.size());
    }
    model.reset_state();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = evaluate(model, train_split).accuracy;
    const EvalReport id = evaluate(model, test_id);
    const EvalReport ood = evaluate(model, test_ood);
    rec.test_id = id.accuracy;
    rec.test_ood = ood.accuracy;
    rec.test_overall = overall_accuracy(id, ood);
    records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.set_mode(nn::Mode::kEval);

  TrainResult result{records, std::move(model), {}, {}, {}, adam.step};
  if (!config.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(config.out_dir, ec);
    if (ec) throw DataError("cannot create " + config.out_dir.string() + ": " + ec.message());
    result.checkpoint = config.out_dir / "model.swm";
    result.curves_csv = config.out_dir / "curves.csv";
    result.curves_plot = config.out_dir / "curves.ppm";
    models::save_checkpoint(result.model, result.checkpoint);
    export_curves(result.records, result.curves_csv);
    export_plot(result.records, result.curves_plot);
  }
  return result;
}

// ---------------------------------------------------------------------------

void export_curves(std::span<const EpochRecord> records, const std::filesystem::path& path) {
  std::string text = "epoch,train_acc,test_overall,test_id,test_ood,loss\n";
  char line[256];
  for (const EpochRecord& r : records) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_acc,
                  r.test_overall, r.test_id, r.test_ood, r.loss);
    text += line;
  }
  io::write_text(path, text);
}

std::vector<EpochRecord> read_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_acc,test_overall,test_id,test_ood,loss") {
    throw DataError("unexpected curves header in " + path.string());
  }
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.train_acc,
                    &r.test_overall, &r.test_id, &r.test_ood, &r.loss) != 6) {
      throw DataError("malformed curves row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

namespace {

struct Canvas {
  std::size_t w, h;
  std::vector<std::uint8_t> px;

  Canvas(std::size_t width, std::size_t height) : w(width), h(height), px(3 * width * height, 255) {}

  void set(long x, long y, const std::array<std::uint8_t, 3>& c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
    std::copy(c.begin(), c.end(), px.begin() + 3 * (static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)));
  }

  void line(long x0, long y0, long x1, long y1, const std::array<std::uint8_t, 3>& c, int thick) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      for (int oy = 0; oy < thick; ++oy)
        for (int ox = 0; ox < thick; ++ox) set(x0 + ox, y0 + oy, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }
};

}  // namespace

void export_plot(std::span<const EpochRecord> records, const std::filesystem::path& path,
                 std::size_t width, std::size_t height) {
  if (width < 100 || height < 100) throw std::invalid_argument("plot is too small");
  Canvas canvas(width, height);
  const long left = 40, right = static_cast<long>(width) - 20;
  const long top = 20, bottom = static_cast<long>(height) - 40;
  const std::array<std::uint8_t, 3> axis{0, 0, 0}, grid{220, 220, 220};
  for (int i = 0; i <= 10; ++i) {
    const long y = bottom - (bottom - top) * i / 10;
    canvas.line(left, y, right, y, grid, 1);
  }
  canvas.line(left, top, left, bottom, axis, 1);
  canvas.line(left, bottom, right, bottom, axis, 1);

  const std::size_t n = records.size();
  auto px = [&](std::size_t i) {
    return n <= 1 ? left : left + static_cast<long>((right - left) * static_cast<double>(i) / (n - 1));
  };
  auto py = [&](double acc) {
    return bottom - static_cast<long>(std::lround((bottom - top) * std::clamp(acc, 0.0, 1.0)));
  };
  const auto series = [](const EpochRecord& r, std::size_t s) {
    switch (s) {
      case 0: return r.train_acc;
      case 1: return r.test_overall;
      case 2: return r.test_id;
      default: return r.test_ood;
    }
  };
  for (std::size_t s = 0; s < kSeriesColors.size(); ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + 1 < n ? i + 1 : i;
      canvas.line(px(i), py(series(records[i], s)), px(j), py(series(records[j], s)),
                  kSeriesColors[s], 2);
    }
  }

  std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), canvas.px.begin(), canvas.px.end());
  io::write_bytes(path, bytes);
}

// ---------------------------------------------------------------------------

BenchStats summarize_timings(std::span<const double> ms) {
  BenchStats s;
  s.runs = ms.size();
  if (ms.empty()) return s;
  double sum = 0.0;
  for (double v : ms) sum += v;
  s.mean_ms = sum / static_cast<double>(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
  std::vector<double> sorted(ms.begin(), ms.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median_ms = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return s;
}

BenchStats bench_inference(Classifier& model, const Tensor& frames, std::size_t n_warmup,
                           std::size_t n_runs) {
  if (n_runs < 30) {
    throw std::invalid_argument("benchmark needs at least 30 timed runs, got " +
                                std::to_string(n_runs));
  }
  const nn::Mode previous = model.mode();
  model.set_mode(nn::Mode::kEval);
  for (std::size_t i = 0; i < n_warmup; ++i) models::infer(model, frames);
  std::vector<double> ms;
  ms.reserve(n_runs);
  for (std::size_t i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor out = models::infer(model, frames);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  model.reset_state();
  model.set_mode(previous);
  return summarize_timings(ms);
}

std::string BenchReport::text() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %6s %12s %12s %12s\n", "method", "runs", "mean_ms",
                "median_ms", "std_ms");
  os << line;
  for (const BenchRow& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %6zu %12.4f %12.4f %12.4f\n", r.label.c_str(),
                  r.stats.runs, r.stats.mean_ms, r.stats.median_ms, r.stats.std_ms);
    os << line;
  }
  return os.str();
}

json BenchReport::json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    out.push_back({{"method", r.label},
                   {"runs", r.stats.runs},
                   {"mean_ms", r.stats.mean_ms},
                   {"median_ms", r.stats.median_ms},
                   {"std_ms", r.stats.std_ms}});
  }
  return nlohmann::json{{"unit", "ms per single-sample inference"}, {"results", out}};
}

BenchReport run_benchmark(const std::filesystem::path& data_dir, std::size_t n_runs,
                          std::size_t n_warmup, std::uint64_t seed,
                          const models::ArchConfig& base) {
  if (n_runs < 30) {
    throw std::invalid_argument("benchmark needs at least 30 timed runs, got " +
                                std::to_string(n_runs));
  }
  const std::vector<scene::LoadedSample> samples = scene::load_split(data_dir, "test_id");
  if (samples.empty()) throw DataError("no test_id samples in " + data_dir.string());
  const scene::LoadedSample& sample = samples.front();

  struct Setup {
    const char* label;
    NetworkKind kind;
    Modality modality;
  };
  const Setup setups[] = {{"SNN+DVS", NetworkKind::kSnn, Modality::kDvs},
                          {"CNN+DVS", NetworkKind::kCnn, Modality::kDvs},
                          {"CNN+RGB", NetworkKind::kCnn, Modality::kRgb}};
  BenchReport report;
  for (const Setup& s : setups) {
    models::ArchConfig arch = base;
    arch.input_channels = models::channels_for(s.modality);
    Classifier model(s.kind, s.modality, arch, derive_seed(seed, 1));
    const Tensor frames = models::prepare_input(sample, s.modality, sample.entry.scene, arch.timesteps);
    report.rows.push_back({s.label, bench_inference(model, frames, n_warmup, n_runs)});
  }
  return report;
}

}  // namespace spikewright::train
