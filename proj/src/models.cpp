#include "spikewright/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "spikewright/error.hpp"
#include "spikewright/io.hpp"
#include "spikewright/random.hpp"

namespace spikewright::models {

using nlohmann::json;

const char* to_string(NetworkKind kind) { return kind == NetworkKind::kSnn ? "snn" : "cnn"; }
const char* to_string(Modality modality) { return modality == Modality::kDvs ? "dvs" : "rgb"; }

NetworkKind parse_network(const std::string& name) {
  if (name == "snn") return NetworkKind::kSnn;
  if (name == "cnn") return NetworkKind::kCnn;
  throw std::invalid_argument("unknown network '" + name + "' (expected snn or cnn)");
}

Modality parse_modality(const std::string& name) {
  if (name == "dvs") return Modality::kDvs;
  if (name == "rgb") return Modality::kRgb;
  throw std::invalid_argument("unknown modality '" + name + "' (expected dvs or rgb)");
}

std::size_t channels_for(Modality modality) { return modality == Modality::kDvs ? 2 : 3; }

void ArchConfig::validate() const {
  if (input_channels == 0 || timesteps == 0 || blocks == 0 || channels == 0 || hidden == 0 ||
      classes < 2 || vote_group == 0) {
    throw std::invalid_argument("architecture sizes must be positive and classes >= 2");
  }
  const std::size_t factor = std::size_t{1} << blocks;
  if (input_height % factor != 0 || input_width % factor != 0 || input_height < factor ||
      input_width < factor) {
    throw std::invalid_argument("input " + std::to_string(input_height) + "x" +
                                std::to_string(input_width) + " is not divisible by 2^" +
                                std::to_string(blocks));
  }
  lif.validate();
}

json to_json(const ArchConfig& a) {
  return json{{"input_channels", a.input_channels},
              {"timesteps", a.timesteps},
              {"blocks", a.blocks},
              {"channels", a.channels},
              {"hidden", a.hidden},
              {"classes", a.classes},
              {"vote_group", a.vote_group},
              {"input_height", a.input_height},
              {"input_width", a.input_width},
              {"lif",
               {{"tau", a.lif.tau},
                {"v_threshold", a.lif.v_threshold},
                {"e_rest", a.lif.e_rest},
                {"alpha", a.lif.alpha},
                {"tau_trainable", a.lif.tau_trainable}}}};
}

ArchConfig arch_from_json(const json& j, ArchConfig a) {
  auto take = [](const json& src, const char* key, auto& field) {
    if (src.contains(key)) field = src.at(key).get<std::decay_t<decltype(field)>>();
  };
  take(j, "input_channels", a.input_channels);
  take(j, "timesteps", a.timesteps);
  take(j, "blocks", a.blocks);
  take(j, "channels", a.channels);
  take(j, "hidden", a.hidden);
  take(j, "classes", a.classes);
  take(j, "vote_group", a.vote_group);
  take(j, "input_height", a.input_height);
  take(j, "input_width", a.input_width);
  if (j.contains("lif")) {
    const json& l = j.at("lif");
    take(l, "tau", a.lif.tau);
    take(l, "v_threshold", a.lif.v_threshold);
    take(l, "e_rest", a.lif.e_rest);
    take(l, "alpha", a.lif.alpha);
    take(l, "tau_trainable", a.lif.tau_trainable);
  }
  return a;
}

// ---------------------------------------------------------------------------

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

ad::Variable param(Tensor t) { return ad::Variable(std::move(t), true); }

}  // namespace

Classifier::Classifier(NetworkKind kind, Modality modality, ArchConfig arch, std::uint64_t seed,
                       Init init)
    : kind_(kind), modality_(modality), arch_(arch) {
  arch_.validate();
  if (kind == NetworkKind::kSnn && modality == Modality::kRgb) {
    throw std::invalid_argument("SNN classifiers run on DVS input only");
  }
  Rng rng(seed);
  const bool zero = init == Init::kZero;
  std::size_t in = kind == NetworkKind::kCnn ? arch_.input_channels * arch_.timesteps
                                             : arch_.input_channels;
  for (std::size_t b = 0; b < arch_.blocks; ++b) {
    const std::size_t fan_in = in * 9;
    ConvBlock block{
        param(zero ? Tensor::zeros({arch_.channels, in, 3, 3})
                   : kaiming_uniform({arch_.channels, in, 3, 3}, fan_in, rng)),
        param(Tensor::zeros({arch_.channels})),
        param(Tensor::full({arch_.channels}, zero ? 0.0f : 1.0f)),
        param(Tensor::zeros({arch_.channels})),
        nn::BatchNormStats(arch_.channels)};
    blocks_.push_back(std::move(block));
    in = arch_.channels;
  }
  const std::size_t flat = arch_.flattened();
  const std::size_t out = arch_.head_outputs(kind);
  fc1_w_ = param(zero ? Tensor::zeros({arch_.hidden, flat})
                      : kaiming_uniform({arch_.hidden, flat}, flat, rng));
  fc1_b_ = param(Tensor::zeros({arch_.hidden}));
  fc2_w_ = param(zero ? Tensor::zeros({out, arch_.hidden})
                      : kaiming_uniform({out, arch_.hidden}, arch_.hidden, rng));
  fc2_b_ = param(Tensor::zeros({out}));

  if (kind == NetworkKind::kSnn) {
    lif_states_.resize(arch_.blocks + 2);
    if (arch_.lif.tau_trainable) {
      for (std::size_t i = 0; i < lif_states_.size(); ++i) {
        taus_.push_back(param(Tensor({1}, arch_.lif.tau)));
      }
    }
  }
}

std::vector<NamedVariable> Classifier::parameters() {
  std::vector<NamedVariable> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.push_back({p + "conv.weight", blocks_[b].weight});
    out.push_back({p + "conv.bias", blocks_[b].bias});
    out.push_back({p + "bn.gamma", blocks_[b].gamma});
    out.push_back({p + "bn.beta", blocks_[b].beta});
  }
  out.push_back({"fc1.weight", fc1_w_});
  out.push_back({"fc1.bias", fc1_b_});
  out.push_back({"fc2.weight", fc2_w_});
  out.push_back({"fc2.bias", fc2_b_});
  for (std::size_t i = 0; i < taus_.size(); ++i) {
    out.push_back({"lif" + std::to_string(i) + ".tau", taus_[i]});
  }
  return out;
}

std::vector<NamedBuffer> Classifier::state() {
  std::vector<NamedBuffer> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    out.push_back({p + "conv.weight", &blocks_[b].weight.mutable_value()});
    out.push_back({p + "conv.bias", &blocks_[b].bias.mutable_value()});
    out.push_back({p + "bn.gamma", &blocks_[b].gamma.mutable_value()});
    out.push_back({p + "bn.beta", &blocks_[b].beta.mutable_value()});
    out.push_back({p + "bn.running_mean", &blocks_[b].stats.running_mean});
    out.push_back({p + "bn.running_var", &blocks_[b].stats.running_var});
  }
  out.push_back({"fc1.weight", &fc1_w_.mutable_value()});
  out.push_back({"fc1.bias", &fc1_b_.mutable_value()});
  out.push_back({"fc2.weight", &fc2_w_.mutable_value()});
  out.push_back({"fc2.bias", &fc2_b_.mutable_value()});
  for (std::size_t i = 0; i < taus_.size(); ++i) {
    out.push_back({"lif" + std::to_string(i) + ".tau", &taus_[i].mutable_value()});
  }
  return out;
}

void Classifier::reset_state() {
  for (auto& s : lif_states_) s.reset();
}

bool Classifier::state_fresh() const {
  return std::all_of(lif_states_.begin(), lif_states_.end(),
                     [](const lif::LifState& s) { return s.fresh; });
}

void Classifier::clamp_time_constants() {
  for (auto& tau : taus_) {
    float& v = tau.mutable_value()[0];
    v = std::max(v, 1.0f + 1e-3f);
  }
}

// ---------------------------------------------------------------------------

Tensor voting(const Tensor& spikes, std::size_t classes) {
  const bool single = spikes.rank() == 1;
  const Tensor rows = single ? spikes.reshaped({1, spikes.numel()}) : spikes;
  require_rank(rows, 2, "voting");
  if (classes == 0 || rows.dim(1) % classes != 0) {
    throw ShapeError("voting: " + std::to_string(rows.dim(1)) +
                     " outputs are not divisible into " + std::to_string(classes) + " groups");
  }
  const std::size_t n = rows.dim(0), k = rows.dim(1) / classes;
  Tensor out({n, classes});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < classes; ++c) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < k; ++j) acc += rows[r * rows.dim(1) + c * k + j];
      out[r * classes + c] = acc / static_cast<float>(k);
    }
  }
  return single ? std::move(out).reshaped({classes}) : out;
}

ad::Variable voting(ad::Tape& tape, const ad::Variable& spikes, std::size_t classes) {
  Tensor out = voting(spikes.value(), classes);
  return tape.record("voting", {spikes}, std::move(out),
                     [spikes, classes](const Tensor& grad) mutable {
                       const std::size_t n = spikes.shape()[0];
                       const std::size_t width = spikes.shape()[1];
                       const std::size_t k = width / classes;
                       Tensor dx(spikes.shape());
                       const float inv = 1.0f / static_cast<float>(k);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t i = 0; i < width; ++i) {
                           dx[r * width + i] = grad[r * classes + i / k] * inv;
                         }
                       }
                       spikes.accumulate_grad(dx);
                     });
}

scene::Label predict(std::span<const float> scores) {
  if (scores.empty()) throw std::invalid_argument("predict: no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best == 0 ? scene::Label::kStop : scene::Label::kDrive;
}

Tensor crop_right_half(const Tensor& frames) {
  if (frames.rank() < 2) throw ShapeError("crop_right_half: need at least [H,W]");
  const std::size_t w = frames.shape().back();
  if (w % 2 != 0) throw ShapeError("crop_right_half: width " + std::to_string(w) + " is odd");
  const std::size_t half = w / 2, rows = frames.numel() / w;
  Shape shape = frames.shape();
  shape.back() = half;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.raw() + r * half, frames.raw() + r * w + half, half * sizeof(float));
  }
  return out;
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw ShapeError("stack: no samples");
  Shape shape = samples.front().shape();
  const std::size_t each = samples.front().numel();
  shape.insert(shape.begin(), samples.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].shape() != samples.front().shape()) throw ShapeError("stack: shape mismatch");
    std::memcpy(out.raw() + i * each, samples[i].raw(), each * sizeof(float));
  }
  return out;
}

Tensor prepare_input(const scene::LoadedSample& sample, Modality modality,
                     const scene::SceneConfig& scene, std::size_t timesteps) {
  std::vector<Tensor> steps;
  if (modality == Modality::kRgb) {
    if (timesteps != 2) throw std::invalid_argument("RGB input has exactly two observations");
    steps.push_back(crop_right_half(sample.rgb0));
    steps.push_back(crop_right_half(sample.rgb1));
  } else {
    const std::uint64_t begin = scene::observation_window(scene, 0).first;
    const std::uint64_t end = scene::observation_window(scene, 1).second;
    const std::uint64_t span = end - begin;
    for (std::size_t t = 0; t < timesteps; ++t) {
      const std::uint64_t lo = begin + span * t / timesteps;
      const std::uint64_t hi = begin + span * (t + 1) / timesteps;
      steps.push_back(crop_right_half(events::accumulate(sample.events, lo, hi)));
    }
  }
  return stack(steps);
}

// ---------------------------------------------------------------------------

namespace {

void require_batch(const Classifier& model, const Tensor& batch) {
  const ArchConfig& a = model.arch();
  const Shape expected{batch.rank() == 5 ? batch.dim(0) : 0, a.timesteps, a.input_channels,
                       a.input_height, a.input_width};
  if (batch.rank() != 5 || batch.shape() != expected) {
    throw ShapeError("classifier input must be [N," + std::to_string(a.timesteps) + "," +
                     std::to_string(a.input_channels) + "," + std::to_string(a.input_height) +
                     "," + std::to_string(a.input_width) + "], got " +
                     shape_to_string(batch.shape()));
  }
}

// [N,T,...] -> [T*N,...]
Tensor time_major(const Tensor& batch) {
  const std::size_t n = batch.dim(0), t = batch.dim(1);
  const std::size_t each = batch.numel() / (n * t);
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  shape[0] = n * t;
  Tensor out(shape);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < t; ++k) {
      std::memcpy(out.raw() + (k * n + s) * each, batch.raw() + (s * t + k) * each,
                  each * sizeof(float));
    }
  }
  return out;
}

ad::Variable forward_snn_batch(ad::Tape& tape, Classifier& model, const Tensor& batch,
                               StateMode state_mode) {
  if (state_mode == StateMode::kRequireReset && !model.state_fresh()) {
    throw std::logic_error("forward_snn: LIF states must be reset before each sample");
  }
  const ArchConfig& a = model.arch();
  const std::size_t steps = a.timesteps;
  auto& states = model.lif_states();
  auto tau = [&model](std::size_t layer) {
    return model.taus().empty() ? ad::Variable{} : model.taus()[layer];
  };

  ad::Variable x(time_major(batch));
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    ConvBlock& blk = model.blocks()[b];
    x = nn::conv2d(tape, x, blk.weight, blk.bias, 1, 1);
    x = nn::batchnorm2d(tape, x, blk.gamma, blk.beta, model.mode(), blk.stats);
    x = lif::lif_sequence(tape, states[b], x, steps, a.lif, tau(b));
    x = nn::maxpool2x2(tape, x);
  }
  const std::size_t rows = x.shape()[0];
  x = nn::reshape(tape, x, {rows, a.flattened()});
  x = nn::linear(tape, x, model.fc1_weight(), model.fc1_bias());
  x = lif::lif_sequence(tape, states[a.blocks], x, steps, a.lif, tau(a.blocks));
  x = nn::linear(tape, x, model.fc2_weight(), model.fc2_bias());
  x = lif::lif_sequence(tape, states[a.blocks + 1], x, steps, a.lif, tau(a.blocks + 1));
  x = voting(tape, x, a.classes);
  return nn::mean_over_time(tape, x, steps);
}

ad::Variable forward_cnn_batch(ad::Tape& tape, Classifier& model, const Tensor& batch) {
  const ArchConfig& a = model.arch();
  const std::size_t n = batch.dim(0);
  ad::Variable x(batch.reshaped({n, a.timesteps * a.input_channels, a.input_height, a.input_width}));
  for (ConvBlock& blk : model.blocks()) {
    x = nn::conv2d(tape, x, blk.weight, blk.bias, 1, 1);
    x = nn::batchnorm2d(tape, x, blk.gamma, blk.beta, model.mode(), blk.stats);
    x = nn::relu(tape, x);
    x = nn::maxpool2x2(tape, x);
  }
  x = nn::reshape(tape, x, {n, a.flattened()});
  x = nn::linear(tape, x, model.fc1_weight(), model.fc1_bias());
  x = nn::relu(tape, x);
  x = nn::linear(tape, x, model.fc2_weight(), model.fc2_bias());
  return nn::softmax(tape, x);
}

}  // namespace

ad::Variable forward(ad::Tape& tape, Classifier& model, const Tensor& batch, StateMode state_mode) {
  require_batch(model, batch);
  if (model.kind() == NetworkKind::kSnn) return forward_snn_batch(tape, model, batch, state_mode);
  return forward_cnn_batch(tape, model, batch);
}

Tensor forward_snn(Classifier& model, const Tensor& frames, StateMode state_mode) {
  if (model.kind() != NetworkKind::kSnn) throw std::invalid_argument("forward_snn on a CNN");
  ad::Tape tape(false);
  Shape shape = frames.shape();
  shape.insert(shape.begin(), 1);
  Tensor scores = forward(tape, model, frames.reshaped(shape), state_mode).value();
  return std::move(scores).reshaped({model.arch().classes});
}

Tensor forward_cnn(Classifier& model, const Tensor& frames) {
  if (model.kind() != NetworkKind::kCnn) throw std::invalid_argument("forward_cnn on an SNN");
  ad::Tape tape(false);
  Shape shape = frames.shape();
  shape.insert(shape.begin(), 1);
  Tensor probs = forward(tape, model, frames.reshaped(shape)).value();
  return std::move(probs).reshaped({model.arch().classes});
}

Tensor infer(Classifier& model, const Tensor& frames) {
  if (model.kind() == NetworkKind::kSnn) {
    model.reset_state();
    return forward_snn(model, frames);
  }
  return forward_cnn(model, frames);
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'S', 'W', 'M', '1'};
}

void save_checkpoint(Classifier& model, const std::filesystem::path& path) {
  json tensors = json::array();
  std::vector<NamedBuffer> state = model.state();
  for (const NamedBuffer& b : state) {
    tensors.push_back(json{{"name", b.name}, {"shape", b.tensor->shape()}});
  }
  const json header{{"kind", to_string(model.kind())},
                    {"modality", to_string(model.modality())},
                    {"arch", to_json(model.arch())},
                    {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> bytes(kCheckpointMagic, kCheckpointMagic + 4);
  io::append_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes.insert(bytes.end(), text.begin(), text.end());
  for (const NamedBuffer& b : state) {
    for (float v : b.tensor->data()) io::append_f32(bytes, v);
  }
  io::write_bytes(path, bytes);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  const std::vector<std::uint8_t> bytes = io::read_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw DecodeError("bad checkpoint magic, expected \"SWM1\"", 0);
  }
  const std::uint32_t length = io::load_u32(bytes, 4);
  if (8ull + length > bytes.size()) throw DecodeError("truncated checkpoint header", 8);
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + length);
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed checkpoint header: ") + e.what(), 8);
  }
  Classifier model(parse_network(header.at("kind").get<std::string>()),
                   parse_modality(header.at("modality").get<std::string>()),
                   arch_from_json(header.at("arch")), 0, Init::kZero);
  std::vector<NamedBuffer> state = model.state();
  const json& tensors = header.at("tensors");
  if (tensors.size() != state.size()) {
    throw DecodeError("checkpoint tensor count does not match architecture", 8);
  }
  std::size_t offset = 8ull + length;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const Shape shape = tensors[i].at("shape").get<Shape>();
    if (tensors[i].at("name").get<std::string>() != state[i].name ||
        shape != state[i].tensor->shape()) {
      throw DecodeError("checkpoint tensor '" + state[i].name + "' does not match", offset);
    }
    for (float& v : state[i].tensor->data()) {
      v = io::load_f32(bytes, offset);
      offset += 4;
    }
  }
  if (offset != bytes.size()) throw DecodeError("trailing bytes in checkpoint", offset);
  return model;
}

}  // namespace spikewright::models
