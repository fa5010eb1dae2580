#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spikewright/autodiff.hpp"
#include "spikewright/tensor.hpp"

// Differentiable layer kernels. Each layer comes as a raw forward/backward
// pair on plain tensors plus a tape-recording wrapper on ad::Variable.
namespace spikewright::nn {

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// conv2d: input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

/// The forward context of a convolution is its input and weight.
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, std::size_t stride,
                            std::size_t padding, const Tensor& grad_output);

ad::Variable conv2d(ad::Tape& tape, const ad::Variable& input, const ad::Variable& weight,
                    const ad::Variable& bias, std::size_t stride, std::size_t padding);

// ---------------------------------------------------------------------------
// batchnorm2d: per-channel normalization over (N,H,W).

struct BatchNormStats {
  explicit BatchNormStats(std::size_t channels = 1);

  Tensor running_mean;
  Tensor running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;
};

struct BatchNormContext {
  Tensor normalized;             // x_hat, same shape as input
  std::vector<float> inv_std;    // per channel
  Mode mode = Mode::kTrain;
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

/// Train mode normalizes with biased batch statistics and folds the unbiased
/// batch variance into the running estimate; eval mode uses running stats.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                   BatchNormStats& stats, BatchNormContext* context = nullptr);

BatchNormGrads batchnorm2d_backward(const BatchNormContext& context, const Tensor& gamma,
                                    const Tensor& grad_output);

ad::Variable batchnorm2d(ad::Tape& tape, const ad::Variable& input, const ad::Variable& gamma,
                         const ad::Variable& beta, Mode mode, BatchNormStats& stats);

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties go to the first element in row-major order.

struct MaxPoolContext {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

Tensor maxpool2x2(const Tensor& input, MaxPoolContext* context = nullptr);
Tensor maxpool2x2_backward(const MaxPoolContext& context, const Tensor& grad_output);
ad::Variable maxpool2x2(ad::Tape& tape, const ad::Variable& input);

// ---------------------------------------------------------------------------
// linear: input [N,F], weight [O,F], bias [O] -> [N,O].

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output);
ad::Variable linear(ad::Tape& tape, const ad::Variable& input, const ad::Variable& weight,
                    const ad::Variable& bias);

// ---------------------------------------------------------------------------
// Elementwise and shape plumbing.

Tensor relu(const Tensor& input);
/// Subgradient at 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);
ad::Variable relu(ad::Tape& tape, const ad::Variable& input);

ad::Variable reshape(ad::Tape& tape, const ad::Variable& input, Shape shape);

/// Row-wise softmax over [N,K].
Tensor softmax(const Tensor& logits);
ad::Variable softmax(ad::Tape& tape, const ad::Variable& logits);

/// [T*N, F] laid out time-major -> [N, F] mean over the T leading groups.
Tensor mean_over_time(const Tensor& input, std::size_t steps);
ad::Variable mean_over_time(ad::Tape& tape, const ad::Variable& input, std::size_t steps);

// ---------------------------------------------------------------------------
// Losses return a [1] tensor.

constexpr float kBceClamp = 1e-7f;

float mse_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss_backward(const Tensor& pred, const Tensor& target);
ad::Variable mse_loss(ad::Tape& tape, const ad::Variable& pred, const Tensor& target);

/// Mean of -[t ln p + (1-t) ln(1-p)] with p clamped to [1e-7, 1-1e-7].
float bce_loss(const Tensor& prob, const Tensor& target);
Tensor bce_loss_backward(const Tensor& prob, const Tensor& target);
ad::Variable bce_loss(ad::Tape& tape, const ad::Variable& prob, const Tensor& target);

}  // namespace spikewright::nn
