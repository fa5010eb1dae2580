#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "spikewright/error.hpp"
#include "spikewright/io.hpp"
#include "spikewright/train.hpp"

using namespace spikewright;
using namespace spikewright::train;
using scene::Label;
namespace fs = std::filesystem;

namespace {

// Shared small dataset for the training cases.
const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / "spikewright_train_data";
    fs::remove_all(p);
    scene::generate_dataset(p, 42);
    return p;
  }();
  return dir;
}

ExperimentConfig small_config(models::NetworkKind net, models::Modality mod, std::size_t epochs) {
  ExperimentConfig c;
  c.network = net;
  c.modality = mod;
  c.epochs = epochs;
  c.data_dir = dataset();
  c.arch.channels = 8;
  c.arch.hidden = 16;
  return c;
}

struct Tally {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Direct count of the four outcomes.
Tally tally(const std::vector<Label>& actual, const std::vector<Label>& predicted) {
  Tally t;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool a = actual[i] == Label::kDrive, p = predicted[i] == Label::kDrive;
    if (a && p) ++t.tp;
    else if (!a && p) ++t.fp;
    else if (a && !p) ++t.fn;
    else ++t.tn;
  }
  return t;
}

}  // namespace

TEST_CASE("metrics for a perfect and a constant stop predictor") {
  const std::vector<Label> actual{Label::kStop, Label::kDrive, Label::kDrive, Label::kStop};
  const EvalReport perfect = report_from_predictions(actual, actual);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.confusion[0][0] == 2);
  CHECK(perfect.confusion[1][1] == 2);

  const std::vector<Label> stop(4, Label::kStop);
  const EvalReport constant = report_from_predictions(actual, stop);
  CHECK(constant.accuracy == 0.5);
  CHECK(constant.precision == 0.0);
  CHECK(constant.recall == 0.0);
  CHECK(constant.f1 == 0.0);
  CHECK(constant.confusion[1][0] == 2);

  CHECK_THROWS_AS(report_from_predictions({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(report_from_predictions(actual, std::vector<Label>(3)), std::invalid_argument);
}

TEST_CASE("metrics agree with a direct tally on random predictions") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<Label> actual(n), predicted(n);
    for (std::size_t i = 0; i < n; ++i) {
      actual[i] = static_cast<Label>(rng.below(2));
      predicted[i] = static_cast<Label>(rng.below(2));
    }
    const Tally t = tally(actual, predicted);
    const EvalReport r = report_from_predictions(actual, predicted);
    CHECK(r.correct == t.tp + t.tn);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(t.tp + t.tn) / n));
    const double precision = t.tp + t.fp == 0 ? 0.0 : static_cast<double>(t.tp) / (t.tp + t.fp);
    const double recall = t.tp + t.fn == 0 ? 0.0 : static_cast<double>(t.tp) / (t.tp + t.fn);
    const double f1 = precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
    CHECK(r.precision == doctest::Approx(precision));
    CHECK(r.recall == doctest::Approx(recall));
    CHECK(r.f1 == doctest::Approx(f1));
    CHECK(r.confusion[1][1] == t.tp);
    CHECK(r.confusion[0][1] == t.fp);
  }
}

TEST_CASE("overall accuracy pools both test splits") {
  EvalReport a, b;
  a.size = 12;
  a.correct = 9;
  b.size = 18;
  b.correct = 18;
  CHECK(overall_accuracy(a, b) == doctest::Approx(27.0 / 30.0));
}

TEST_CASE("adam: zero gradient leaves parameters, first step moves by lr against the sign") {
  Tensor p({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
  const Tensor before = p;
  Tensor zero({3});
  AdamState state;
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&zero};
  adam_step(params, grads, state, {});
  CHECK(p == before);

  Tensor q({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
  Tensor g({3}, std::vector<float>{0.3f, -7.0f, 1e-3f});
  AdamState s2;
  Tensor* qp[] = {&q};
  const Tensor* gp[] = {&g};
  adam_step(qp, gp, s2, {});
  CHECK(q[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(-2.0 + 0.001).epsilon(1e-6));
  CHECK(q[2] == doctest::Approx(0.5 - 0.001 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam: two steps against a hand trace") {
  Tensor p({1}, 0.0f);
  AdamState state;
  Tensor* params[] = {&p};
  const AdamOptions o{0.01};
  Tensor g1({1}, 1.0f), g2({1}, -0.5f);
  const Tensor* first[] = {&g1};
  const Tensor* second[] = {&g2};
  adam_step(params, first, state, o);
  adam_step(params, second, state, o);
  // m = 0.9*0.1 + 0.1*(-0.5) = 0.04; v = 0.999*0.001 + 0.001*0.25 = 0.001249
  const double mhat = 0.04 / (1 - 0.81), vhat = 0.001249 / (1 - 0.998001);
  const double expected = -0.01 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-5));
  CHECK(state.step == 2);
}

TEST_CASE("curves file round trip and layout") {
  std::vector<EpochRecord> records;
  Rng rng(2);
  for (std::size_t e = 1; e <= 100; ++e) {
    records.push_back({e, rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
  }
  const fs::path path = fs::temp_directory_path() / "spikewright_curves.csv";
  export_curves(records, path);
  const auto bytes = io::read_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  CHECK(std::count(text.begin(), text.end(), '\n') == 101);
  CHECK(text.starts_with("epoch,train_acc,test_overall,test_id,test_ood,loss\n"));
  CHECK(read_curves(path) == records);
  fs::remove(path);
}

TEST_CASE("plot draws the four series colors on white") {
  std::vector<EpochRecord> records{{1, 0.1, 0.3, 0.5, 0.7, 1.0}, {2, 0.2, 0.4, 0.6, 0.8, 0.5}};
  const fs::path path = fs::temp_directory_path() / "spikewright_plot.ppm";
  export_plot(records, path);
  const auto bytes = io::read_bytes(path);
  const std::string header = "P6\n640 400\n255\n";
  REQUIRE(bytes.size() == header.size() + 640 * 400 * 3);
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  const std::uint8_t* px = bytes.data() + header.size();
  CHECK((px[0] == 255 && px[1] == 255 && px[2] == 255));
  for (const auto& color : kSeriesColors) {
    bool found = false;
    for (std::size_t i = 0; i < 640 * 400 && !found; ++i) {
      found = px[3 * i] == color[0] && px[3 * i + 1] == color[1] && px[3 * i + 2] == color[2];
    }
    CHECK(found);
  }
  fs::remove(path);
}

TEST_CASE("timing summary") {
  const double ms[] = {1.0, 2.0, 3.0, 4.0, 10.0};
  const BenchStats s = summarize_timings(ms);
  CHECK(s.runs == 5);
  CHECK(s.mean_ms == doctest::Approx(4.0));
  CHECK(s.median_ms == doctest::Approx(3.0));
  CHECK(s.std_ms == doctest::Approx(std::sqrt(50.0 / 4.0)));
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.modality = models::Modality::kRgb;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.network = models::NetworkKind::kCnn;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.batch_size = 12;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  const ExperimentConfig d;
  CHECK(d.learning_rate == 0.001);
  CHECK(d.batch_size == 12);
  CHECK(d.epochs == 100);
  CHECK(d.seed == 42);
}

TEST_CASE("training: five optimizer steps per epoch and artifacts on disk") {
  ExperimentConfig c = small_config(models::NetworkKind::kCnn, models::Modality::kDvs, 2);
  c.out_dir = fs::temp_directory_path() / "spikewright_train_out";
  fs::remove_all(c.out_dir);
  const TrainResult r = run_training(c);
  CHECK(r.optimizer_steps == 10);
  REQUIRE(r.records.size() == 2);
  CHECK(r.records[1].epoch == 2);
  for (const EpochRecord& e : r.records) {
    CHECK(std::isfinite(e.loss));
    CHECK(e.test_overall == doctest::Approx((12 * e.test_id + 18 * e.test_ood) / 30));
  }
  CHECK(fs::exists(r.checkpoint));
  CHECK(read_curves(r.curves_csv) == r.records);
  CHECK(fs::file_size(r.curves_plot) > 0);
  fs::remove_all(c.out_dir);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const ExperimentConfig c = small_config(models::NetworkKind::kSnn, models::Modality::kDvs, 2);
  TrainResult a = run_training(c);
  const TrainResult b = run_training(c);
  CHECK(a.records == b.records);
  ExperimentConfig other = c;
  other.seed = 7;
  CHECK_FALSE(run_training(other).model.fc1_weight().value() == a.model.fc1_weight().value());
}

TEST_CASE("training rejects bad setups") {
  ExperimentConfig c = small_config(models::NetworkKind::kSnn, models::Modality::kRgb, 1);
  CHECK_THROWS_AS(run_training(c), std::invalid_argument);
  c.modality = models::Modality::kDvs;
  c.batch_size = 61;
  CHECK_THROWS_AS(run_training(c), std::invalid_argument);
  c.batch_size = 12;
  c.data_dir = fs::temp_directory_path() / "spikewright_no_such_dataset";
  CHECK_THROWS_AS(run_training(c), DataError);
}

TEST_CASE("zero-initialized cnn predicts stop everywhere") {
  ExperimentConfig c = small_config(models::NetworkKind::kCnn, models::Modality::kRgb, 1);
  c.init = models::Init::kZero;
  models::ArchConfig arch = c.arch;
  arch.input_channels = 3;
  models::Classifier m(models::NetworkKind::kCnn, models::Modality::kRgb, arch, 1, models::Init::kZero);
  const PreparedSplit split = load_prepared(dataset(), "test_id", models::Modality::kRgb, 2);
  const EvalReport r = evaluate(m, split);
  CHECK(r.accuracy == 0.5);
  CHECK(r.confusion[0][0] + r.confusion[1][0] == 12);
}

TEST_CASE("benchmark: three configurations, at least thirty runs") {
  models::ArchConfig arch;
  arch.channels = 8;
  arch.hidden = 16;
  CHECK_THROWS_AS(run_benchmark(dataset(), 29, 1, 42, arch), std::invalid_argument);
  const BenchReport r = run_benchmark(dataset(), 30, 2, 42, arch);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].label == "SNN+DVS");
  CHECK(r.rows[1].label == "CNN+DVS");
  CHECK(r.rows[2].label == "CNN+RGB");
  for (const BenchRow& row : r.rows) {
    CHECK(row.stats.runs == 30);
    CHECK(row.stats.mean_ms > 0.0);
    CHECK(row.stats.std_ms >= 0.0);
  }
  CHECK(r.json().at("results").size() == 3);
  CHECK(r.text().find("CNN+RGB") != std::string::npos);
}
