#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spikewright/autodiff.hpp"
#include "spikewright/layers.hpp"
#include "spikewright/lif.hpp"
#include "spikewright/scene.hpp"
#include "spikewright/tensor.hpp"

namespace spikewright::models {

enum class NetworkKind { kSnn, kCnn };
enum class Modality { kDvs, kRgb };

const char* to_string(NetworkKind kind);
const char* to_string(Modality modality);
/// Throws std::invalid_argument on unknown names.
NetworkKind parse_network(const std::string& name);
Modality parse_modality(const std::string& name);

std::size_t channels_for(Modality modality);

struct ArchConfig {
  std::size_t input_channels = 2;  // per timestep: 2 for DVS, 3 for RGB
  std::size_t timesteps = 2;
  std::size_t blocks = 5;
  std::size_t channels = 32;
  std::size_t hidden = 128;
  std::size_t classes = 2;
  std::size_t vote_group = 10;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  lif::LifParams lif;

  void validate() const;
  std::size_t final_height() const { return input_height >> blocks; }
  std::size_t final_width() const { return input_width >> blocks; }
  std::size_t flattened() const { return channels * final_height() * final_width(); }
  /// SNN heads emit classes * vote_group spikes, CNN heads one logit per class.
  std::size_t head_outputs(NetworkKind kind) const {
    return kind == NetworkKind::kSnn ? classes * vote_group : classes;
  }
};

nlohmann::json to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j, ArchConfig base = {});

enum class Init { kKaiming, kZero };

struct ConvBlock {
  ad::Variable weight;
  ad::Variable bias;
  ad::Variable gamma;
  ad::Variable beta;
  nn::BatchNormStats stats;
};

struct NamedVariable {
  std::string name;
  ad::Variable var;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

/// Conv/BN blocks followed by two linear layers. The SNN places a LIF layer
/// after every BN and after each linear layer and reads out through the
/// voting layer; the CNN uses ReLU and a softmax head.
class Classifier {
 public:
  Classifier(NetworkKind kind, Modality modality, ArchConfig arch, std::uint64_t seed,
             Init init = Init::kKaiming);

  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  NetworkKind kind() const noexcept { return kind_; }
  Modality modality() const noexcept { return modality_; }
  const ArchConfig& arch() const noexcept { return arch_; }

  nn::Mode mode() const noexcept { return mode_; }
  void set_mode(nn::Mode mode) noexcept { mode_ = mode; }

  /// Trainable parameters in declaration order.
  std::vector<NamedVariable> parameters();
  /// Every persisted tensor (parameters and BN running statistics) in
  /// declaration order.
  std::vector<NamedBuffer> state();

  /// Resets every LIF membrane to e_rest before the next sample.
  void reset_state();
  bool state_fresh() const;

  /// Keeps trainable time constants above 1 after an optimizer step.
  void clamp_time_constants();

  // Layer access for the forward passes.
  std::vector<ConvBlock>& blocks() { return blocks_; }
  ad::Variable& fc1_weight() { return fc1_w_; }
  ad::Variable& fc1_bias() { return fc1_b_; }
  ad::Variable& fc2_weight() { return fc2_w_; }
  ad::Variable& fc2_bias() { return fc2_b_; }
  std::vector<lif::LifState>& lif_states() { return lif_states_; }
  std::vector<ad::Variable>& taus() { return taus_; }

 private:
  NetworkKind kind_;
  Modality modality_;
  ArchConfig arch_;
  nn::Mode mode_ = nn::Mode::kEval;
  std::vector<ConvBlock> blocks_;
  ad::Variable fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  std::vector<lif::LifState> lif_states_;  // blocks, then fc1, fc2
  std::vector<ad::Variable> taus_;         // one per LIF layer when trainable
};

enum class StateMode {
  kRequireReset,  // throw unless every LIF state was reset
  kContinue,      // carry membrane potentials over from the previous pass
};

/// batch is [N,T,C,H,W]. SNN: mean voting scores over T, each in [0,1].
/// CNN: softmax probabilities over the T*C stacked channels. Result [N,classes].
ad::Variable forward(ad::Tape& tape, Classifier& model, const Tensor& batch,
                     StateMode state_mode = StateMode::kRequireReset);

/// Single sample [T,C,H,W] without a tape; returns [classes].
Tensor forward_snn(Classifier& model, const Tensor& frames,
                   StateMode state_mode = StateMode::kRequireReset);
Tensor forward_cnn(Classifier& model, const Tensor& frames);
Tensor infer(Classifier& model, const Tensor& frames);

/// Mean of consecutive groups: [B, classes*k] -> [B, classes]. A rank-1
/// input is one row.
Tensor voting(const Tensor& spikes, std::size_t classes);
ad::Variable voting(ad::Tape& tape, const ad::Variable& spikes, std::size_t classes);

/// Index of the largest score; ties resolve to the lowest index (stop).
scene::Label predict(std::span<const float> scores);

/// Keeps columns [W/2, W) of the last axis. W must be even.
Tensor crop_right_half(const Tensor& frames);

/// Stacks equal-shaped samples along a new leading axis.
Tensor stack(std::span<const Tensor> samples);

/// Network input [T,C,H,W/2] for one dataset sample: DVS event counts in
/// T equal windows over the two observations, or the two RGB frames.
Tensor prepare_input(const scene::LoadedSample& sample, Modality modality,
                     const scene::SceneConfig& scene, std::size_t timesteps = 2);

// Checkpoint: "SWM1" | header length u32 | JSON header | float32 LE tensors.
void save_checkpoint(Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace spikewright::models
