#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "spikewright/models.hpp"
#include "spikewright/scene.hpp"
#include "spikewright/tensor.hpp"

namespace spikewright::train {

struct ExperimentConfig {
  models::Modality modality = models::Modality::kDvs;
  models::NetworkKind network = models::NetworkKind::kSnn;
  double learning_rate = 0.001;
  std::size_t batch_size = 12;
  std::size_t epochs = 100;
  std::uint64_t seed = 42;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;  // empty: keep results in memory only
  models::ArchConfig arch;        // input_channels follows the modality
  models::Init init = models::Init::kKaiming;

  /// Throws std::invalid_argument for snn+rgb, zero batch or lr <= 0.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_acc = 0.0;
  double test_overall = 0.0;
  double test_id = 0.0;
  double test_ood = 0.0;
  double loss = 0.0;  // mean per-sample training loss

  bool operator==(const EpochRecord&) const = default;
};

struct EvalReport {
  std::size_t size = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  // confusion[actual][predicted], index 0 = stop, 1 = drive
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  // positive class = drive
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

nlohmann::json to_json(const EvalReport& report);

/// Throws std::invalid_argument for empty or mismatched inputs.
EvalReport report_from_predictions(std::span<const scene::Label> actual,
                                   std::span<const scene::Label> predicted);

/// Network inputs of one split, preprocessed once.
struct PreparedSplit {
  std::string name;
  std::vector<Tensor> inputs;  // [T,C,H,W/2]
  std::vector<scene::Label> labels;

  std::size_t size() const { return inputs.size(); }
};

PreparedSplit prepare_split(const std::string& name, std::span<const scene::LoadedSample> samples,
                            models::Modality modality, std::size_t timesteps);
/// Reads one split from a dataset directory. Throws DataError when missing.
PreparedSplit load_prepared(const std::filesystem::path& data_dir, const std::string& split,
                            models::Modality modality, std::size_t timesteps);

/// Eval-mode predictions, batched; the model's mode is restored afterwards.
std::vector<scene::Label> predict_split(models::Classifier& model, const PreparedSplit& split);
EvalReport evaluate(models::Classifier& model, const PreparedSplit& split);

// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// One Adam update with bias correction. A null gradient counts as zero.
/// Moments are allocated on the first call; shapes must match afterwards.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamOptions& options);
void adam_step(std::span<const models::NamedVariable> params, AdamState& state,
               const AdamOptions& options);

// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<EpochRecord> records;
  models::Classifier model;
  std::filesystem::path checkpoint;  // empty when out_dir is empty
  std::filesystem::path curves_csv;
  std::filesystem::path curves_plot;
  std::size_t optimizer_steps = 0;
};

/// Called after each epoch, e.g. for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on the train split and evaluates train, test_id and test_ood after
/// every epoch. Throws NumericError on a non-finite loss and DataError when
/// the dataset is missing. When out_dir is set, writes model.swm,
/// curves.csv and curves.ppm there.
TrainResult run_training(const ExperimentConfig& config, const EpochCallback& on_epoch = {});

/// Pooled accuracy over both test splits.
double overall_accuracy(const EvalReport& in_domain, const EvalReport& out_of_domain);

// ---------------------------------------------------------------------------

void export_curves(std::span<const EpochRecord> records, const std::filesystem::path& path);
std::vector<EpochRecord> read_curves(const std::filesystem::path& path);

/// Series colors: train, overall, in-domain, out-of-domain.
inline constexpr std::array<std::array<std::uint8_t, 3>, 4> kSeriesColors{{
    {31, 119, 180},   // blue
    {255, 127, 14},   // orange
    {44, 160, 44},    // green
    {214, 39, 40},    // red
}};

/// Accuracy curves on a white canvas as a binary PPM.
void export_plot(std::span<const EpochRecord> records, const std::filesystem::path& path,
                 std::size_t width = 640, std::size_t height = 400);

// ---------------------------------------------------------------------------

struct BenchStats {
  std::size_t runs = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;
};

/// Times single-sample inference. Warmup passes are not recorded.
/// Throws std::invalid_argument when n_runs < 30.
BenchStats bench_inference(models::Classifier& model, const Tensor& frames, std::size_t n_warmup,
                           std::size_t n_runs);
BenchStats summarize_timings(std::span<const double> samples_ms);

struct BenchRow {
  std::string label;  // e.g. "SNN+DVS"
  BenchStats stats;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  std::string text() const;
  nlohmann::json json() const;
};

/// Benchmarks SNN+DVS, CNN+DVS and CNN+RGB on the first test_id sample with
/// freshly initialized models.
BenchReport run_benchmark(const std::filesystem::path& data_dir, std::size_t n_runs,
                          std::size_t n_warmup = 5, std::uint64_t seed = 42,
                          const models::ArchConfig& arch = {});

}  // namespace spikewright::train
