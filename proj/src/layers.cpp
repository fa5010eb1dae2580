#include "spikewright/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "spikewright/error.hpp"
#include "spikewright/parallel.hpp"

namespace spikewright::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, std::size_t stride,
                           std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 weight.dim(0), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_channels) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  const std::size_t padded_h = g.height + 2 * padding;
  const std::size_t padded_w = g.width + 2 * padding;
  if (g.kernel_h > padded_h || g.kernel_w > padded_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.out_h = (padded_h - g.kernel_h) / stride + 1;
  g.out_w = (padded_w - g.kernel_w) / stride + 1;
  return g;
}

// col[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*s + i - p][ox*s + j - p]
void im2col(const float* image, const ConvGeometry& g, float* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const float* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        float* dst = col + row * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          float* out_row = dst + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out_row, out_row + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            out_row[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                              ? 0.0f
                              : src[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    float* plane = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        const float* src = col + row * g.pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          float* dst = plane + static_cast<std::size_t>(y) * g.width;
          const float* in_row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(x)] += in_row[ox];
            }
          }
        }
      }
    }
  }
}

void require_vector(const Tensor& t, std::size_t length, const char* what) {
  if (t.rank() != 1 || t.dim(0) != length) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(length) + "], got " +
                     shape_to_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  require_vector(bias, g.out_channels, "conv2d bias");
  Tensor out({g.batch, g.out_channels, g.out_h, g.out_w});
  const ConstMatrixMap w(weight.raw(), static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.patch()));
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * g.pixels();
  parallel_for(g.batch, [&](std::size_t n) {
    FloatBuffer col(g.patch() * g.pixels());
    im2col(input.raw() + n * in_stride, g, col.data());
    const ConstMatrixMap cols(col.data(), static_cast<Eigen::Index>(g.patch()),
                              static_cast<Eigen::Index>(g.pixels()));
    MatrixMap y(out.raw() + n * out_stride, static_cast<Eigen::Index>(g.out_channels),
                static_cast<Eigen::Index>(g.pixels()));
    y.noalias() = w * cols;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      y.row(static_cast<Eigen::Index>(co)).array() += bias[co];
    }
  });
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, std::size_t stride,
                            std::size_t padding, const Tensor& grad_output) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const Shape expected{g.batch, g.out_channels, g.out_h, g.out_w};
  if (grad_output.shape() != expected) {
    throw ShapeError("conv2d_backward: upstream gradient has shape " +
                     shape_to_string(grad_output.shape()) + ", expected " +
                     shape_to_string(expected));
  }
  Conv2dGrads grads{Tensor::zeros(input.shape()), Tensor::zeros(weight.shape()),
                    Tensor::zeros({g.out_channels})};
  const ConstMatrixMap w(weight.raw(), static_cast<Eigen::Index>(g.out_channels),
                         static_cast<Eigen::Index>(g.patch()));
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * g.pixels();
  const std::size_t w_size = weight.numel();
  FloatBuffer partial_w(g.batch * w_size);
  FloatBuffer partial_b(g.batch * g.out_channels);

  parallel_for(g.batch, [&](std::size_t n) {
    FloatBuffer col(g.patch() * g.pixels());
    im2col(input.raw() + n * in_stride, g, col.data());
    const ConstMatrixMap cols(col.data(), static_cast<Eigen::Index>(g.patch()),
                              static_cast<Eigen::Index>(g.pixels()));
    const ConstMatrixMap dy(grad_output.raw() + n * out_stride,
                            static_cast<Eigen::Index>(g.out_channels),
                            static_cast<Eigen::Index>(g.pixels()));
    MatrixMap dw(partial_w.data() + n * w_size, static_cast<Eigen::Index>(g.out_channels),
                 static_cast<Eigen::Index>(g.patch()));
    dw.noalias() = dy * cols.transpose();
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      partial_b[n * g.out_channels + co] = dy.row(static_cast<Eigen::Index>(co)).sum();
    }
    RowMatrix dcol = w.transpose() * dy;
    col2im_add(dcol.data(), g, grads.input.raw() + n * in_stride);
  });

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t i = 0; i < w_size; ++i) grads.weight[i] += partial_w[n * w_size + i];
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      grads.bias[co] += partial_b[n * g.out_channels + co];
    }
  }
  return grads;
}

ad::Variable conv2d(ad::Tape& tape, const ad::Variable& input, const ad::Variable& weight,
                    const ad::Variable& bias, std::size_t stride, std::size_t padding) {
  Tensor out = conv2d(input.value(), weight.value(), bias.value(), stride, padding);
  return tape.record(
      "conv2d", {input, weight, bias}, std::move(out),
      [input, weight, bias, stride, padding](const Tensor& grad) mutable {
        Conv2dGrads g = conv2d_backward(input.value(), weight.value(), stride, padding, grad);
        if (input.requires_grad()) input.accumulate_grad(g.input);
        if (weight.requires_grad()) weight.accumulate_grad(g.weight);
        if (bias.requires_grad()) bias.accumulate_grad(g.bias);
      });
}

// ---------------------------------------------------------------------------

BatchNormStats::BatchNormStats(std::size_t channels)
    : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, 1.0f)) {}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                   BatchNormStats& stats, BatchNormContext* context) {
  require_rank(input, 4, "batchnorm2d");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  require_vector(gamma, channels, "batchnorm2d gamma");
  require_vector(beta, channels, "batchnorm2d beta");
  require_vector(stats.running_mean, channels, "batchnorm2d running_mean");
  require_vector(stats.running_var, channels, "batchnorm2d running_var");
  const std::size_t count = batch * plane;
  if (mode == Mode::kTrain && count < 2) {
    throw ShapeError("batchnorm2d: train mode needs N*H*W >= 2 values per channel");
  }

  Tensor out(input.shape());
  Tensor normalized(input.shape());
  std::vector<float> inv_std(channels);

  parallel_for(channels, [&](std::size_t c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t n = 0; n < batch; ++n) {
        const float* x = input.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += x[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < batch; ++n) {
        const float* x = input.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = x[i] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(count - 1);
      var /= static_cast<double>(count);
      const double m = stats.momentum;
      stats.running_mean[c] =
          static_cast<float>((1.0 - m) * stats.running_mean[c] + m * mean);
      stats.running_var[c] =
          static_cast<float>((1.0 - m) * stats.running_var[c] + m * unbiased);
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const float istd = static_cast<float>(1.0 / std::sqrt(var + stats.eps));
    const auto mu = static_cast<float>(mean);
    inv_std[c] = istd;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (input[base + i] - mu) * istd;
        normalized[base + i] = xh;
        out[base + i] = gamma[c] * xh + beta[c];
      }
    }
  });

  if (context) {
    context->normalized = std::move(normalized);
    context->inv_std = std::move(inv_std);
    context->mode = mode;
  }
  return out;
}

BatchNormGrads batchnorm2d_backward(const BatchNormContext& context, const Tensor& gamma,
                                    const Tensor& grad_output) {
  const Tensor& xh = context.normalized;
  require_same_shape(xh, grad_output, "batchnorm2d_backward");
  const std::size_t batch = xh.dim(0), channels = xh.dim(1);
  const std::size_t plane = xh.dim(2) * xh.dim(3);
  const std::size_t count = batch * plane;
  BatchNormGrads grads{Tensor(xh.shape()), Tensor::zeros({channels}), Tensor::zeros({channels})};

  parallel_for(channels, [&](std::size_t c) {
    double dgamma = 0.0, dbeta = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dgamma += static_cast<double>(grad_output[base + i]) * xh[base + i];
        dbeta += grad_output[base + i];
      }
    }
    grads.gamma[c] = static_cast<float>(dgamma);
    grads.beta[c] = static_cast<float>(dbeta);
    const double scale = static_cast<double>(gamma[c]) * context.inv_std[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double dx;
        if (context.mode == Mode::kTrain) {
          dx = scale / static_cast<double>(count) *
               (static_cast<double>(count) * grad_output[base + i] - dbeta -
                xh[base + i] * dgamma);
        } else {
          dx = scale * grad_output[base + i];
        }
        grads.input[base + i] = static_cast<float>(dx);
      }
    }
  });
  return grads;
}

ad::Variable batchnorm2d(ad::Tape& tape, const ad::Variable& input, const ad::Variable& gamma,
                         const ad::Variable& beta, Mode mode, BatchNormStats& stats) {
  const bool keep = tape.recording();
  auto context = std::make_shared<BatchNormContext>();
  Tensor out =
      batchnorm2d(input.value(), gamma.value(), beta.value(), mode, stats, keep ? context.get() : nullptr);
  return tape.record("batchnorm2d", {input, gamma, beta}, std::move(out),
                     [input, gamma, beta, context](const Tensor& grad) mutable {
                       BatchNormGrads g = batchnorm2d_backward(*context, gamma.value(), grad);
                       if (input.requires_grad()) input.accumulate_grad(g.input);
                       if (gamma.requires_grad()) gamma.accumulate_grad(g.gamma);
                       if (beta.requires_grad()) beta.accumulate_grad(g.beta);
                     });
}

// ---------------------------------------------------------------------------

Tensor maxpool2x2(const Tensor& input, MaxPoolContext* context) {
  require_rank(input, 4, "maxpool2x2");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dims must be even, got " +
                     shape_to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({input.dim(0), input.dim(1), oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  parallel_for(planes, [&](std::size_t p) {
    const std::size_t in_base = p * h * w;
    const std::size_t out_base = p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t top = in_base + (2 * oy) * w + 2 * ox;
        const std::size_t candidates[4] = {top, top + 1, top + w, top + w + 1};
        std::size_t best = candidates[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (input[candidates[k]] > input[best]) best = candidates[k];
        }
        out[out_base + oy * ow + ox] = input[best];
        argmax[out_base + oy * ow + ox] = static_cast<std::uint32_t>(best);
      }
    }
  });
  if (context) {
    context->input_shape = input.shape();
    context->argmax = std::move(argmax);
  }
  return out;
}

Tensor maxpool2x2_backward(const MaxPoolContext& context, const Tensor& grad_output) {
  if (grad_output.numel() != context.argmax.size()) {
    throw ShapeError("maxpool2x2_backward: upstream gradient size mismatch");
  }
  Tensor grad(context.input_shape);
  for (std::size_t i = 0; i < context.argmax.size(); ++i) {
    grad[context.argmax[i]] += grad_output[i];
  }
  return grad;
}

ad::Variable maxpool2x2(ad::Tape& tape, const ad::Variable& input) {
  auto context = std::make_shared<MaxPoolContext>();
  Tensor out = maxpool2x2(input.value(), tape.recording() ? context.get() : nullptr);
  return tape.record("maxpool2x2", {input}, std::move(out),
                     [input, context](const Tensor& grad) mutable {
                       input.accumulate_grad(maxpool2x2_backward(*context, grad));
                     });
}

// ---------------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input features " + std::to_string(input.dim(1)) +
                     " do not match weight " + shape_to_string(weight.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  require_vector(bias, o, "linear bias");
  Tensor out({n, o});
  const ConstMatrixMap x(input.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  const ConstMatrixMap w(weight.raw(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  MatrixMap y(out.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
  y.noalias() = x * w.transpose();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < o; ++c) out[r * o + c] += bias[c];
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
  const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  if (grad_output.shape() != Shape{n, o}) {
    throw ShapeError("linear_backward: upstream gradient shape mismatch");
  }
  LinearGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor::zeros({o})};
  const ConstMatrixMap x(input.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  const ConstMatrixMap w(weight.raw(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  const ConstMatrixMap dy(grad_output.raw(), static_cast<Eigen::Index>(n),
                          static_cast<Eigen::Index>(o));
  MatrixMap dx(grads.input.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  MatrixMap dw(grads.weight.raw(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  dx.noalias() = dy * w;
  dw.noalias() = dy.transpose() * x;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < o; ++c) grads.bias[c] += grad_output[r * o + c];
  }
  return grads;
}

ad::Variable linear(ad::Tape& tape, const ad::Variable& input, const ad::Variable& weight,
                    const ad::Variable& bias) {
  Tensor out = linear(input.value(), weight.value(), bias.value());
  return tape.record("linear", {input, weight, bias}, std::move(out),
                     [input, weight, bias](const Tensor& grad) mutable {
                       LinearGrads g = linear_backward(input.value(), weight.value(), grad);
                       if (input.requires_grad()) input.accumulate_grad(g.input);
                       if (weight.requires_grad()) weight.accumulate_grad(g.weight);
                       if (bias.requires_grad()) bias.accumulate_grad(g.bias);
                     });
}

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require_same_shape(input, grad_output, "relu_backward");
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    grad[i] = input[i] > 0.0f ? grad_output[i] : 0.0f;
  }
  return grad;
}

ad::Variable relu(ad::Tape& tape, const ad::Variable& input) {
  return tape.record("relu", {input}, relu(input.value()),
                     [input](const Tensor& grad) mutable {
                       input.accumulate_grad(relu_backward(input.value(), grad));
                     });
}

ad::Variable reshape(ad::Tape& tape, const ad::Variable& input, Shape shape) {
  Shape original = input.shape();
  return tape.record("reshape", {input}, input.value().reshaped(std::move(shape)),
                     [input, original](const Tensor& grad) mutable {
                       input.accumulate_grad(grad.reshaped(original));
                     });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = logits.raw() + r * k;
    const float peak = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += std::exp(static_cast<double>(row[c] - peak));
    for (std::size_t c = 0; c < k; ++c) {
      out[r * k + c] = static_cast<float>(std::exp(static_cast<double>(row[c] - peak)) / total);
    }
  }
  return out;
}

ad::Variable softmax(ad::Tape& tape, const ad::Variable& logits) {
  Tensor probs = softmax(logits.value());
  auto saved = std::make_shared<Tensor>(probs);
  return tape.record("softmax", {logits}, std::move(probs),
                     [logits, saved](const Tensor& grad) mutable {
                       const Tensor& p = *saved;
                       const std::size_t n = p.dim(0), k = p.dim(1);
                       Tensor dx(p.shape());
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < k; ++c) dot += grad[r * k + c] * p[r * k + c];
                         for (std::size_t c = 0; c < k; ++c) {
                           dx[r * k + c] =
                               static_cast<float>(p[r * k + c] * (grad[r * k + c] - dot));
                         }
                       }
                       logits.accumulate_grad(dx);
                     });
}

Tensor mean_over_time(const Tensor& input, std::size_t steps) {
  require_rank(input, 2, "mean_over_time");
  if (steps == 0 || input.dim(0) % steps != 0) {
    throw ShapeError("mean_over_time: leading dim " + std::to_string(input.dim(0)) +
                     " not divisible by steps " + std::to_string(steps));
  }
  const std::size_t batch = input.dim(0) / steps, features = input.dim(1);
  const std::size_t block = batch * features;
  Tensor out({batch, features});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < block; ++i) out[i] += input[t * block + i];
  }
  const float inv = 1.0f / static_cast<float>(steps);
  for (std::size_t i = 0; i < block; ++i) out[i] *= inv;
  return out;
}

ad::Variable mean_over_time(ad::Tape& tape, const ad::Variable& input, std::size_t steps) {
  return tape.record("mean_over_time", {input}, mean_over_time(input.value(), steps),
                     [input, steps](const Tensor& grad) mutable {
                       Tensor dx(input.shape());
                       const std::size_t block = grad.numel();
                       const float inv = 1.0f / static_cast<float>(steps);
                       for (std::size_t t = 0; t < steps; ++t) {
                         for (std::size_t i = 0; i < block; ++i) dx[t * block + i] = grad[i] * inv;
                       }
                       input.accumulate_grad(dx);
                     });
}

// ---------------------------------------------------------------------------

float mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(pred.numel()));
}

Tensor mse_loss_backward(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  Tensor grad(pred.shape());
  const float scale = 2.0f / static_cast<float>(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i) grad[i] = scale * (pred[i] - target[i]);
  return grad;
}

ad::Variable mse_loss(ad::Tape& tape, const ad::Variable& pred, const Tensor& target) {
  Tensor loss({1}, mse_loss(pred.value(), target));
  return tape.record("mse_loss", {pred}, std::move(loss),
                     [pred, target](const Tensor& grad) mutable {
                       Tensor g = mse_loss_backward(pred.value(), target);
                       for (float& v : g.data()) v *= grad[0];
                       pred.accumulate_grad(g);
                     });
}

float bce_loss(const Tensor& prob, const Tensor& target) {
  require_same_shape(prob, target, "bce_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < prob.numel(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]), static_cast<double>(kBceClamp),
                                1.0 - static_cast<double>(kBceClamp));
    const double t = target[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return static_cast<float>(acc / static_cast<double>(prob.numel()));
}

Tensor bce_loss_backward(const Tensor& prob, const Tensor& target) {
  require_same_shape(prob, target, "bce_loss");
  Tensor grad(prob.shape());
  const double n = static_cast<double>(prob.numel());
  const double lo = kBceClamp, hi = 1.0 - static_cast<double>(kBceClamp);
  for (std::size_t i = 0; i < prob.numel(); ++i) {
    const double p = prob[i];
    if (p < lo || p > hi) continue;  // clamp has zero derivative outside the range
    const double t = target[i];
    grad[i] = static_cast<float>((-t / p + (1.0 - t) / (1.0 - p)) / n);
  }
  return grad;
}

ad::Variable bce_loss(ad::Tape& tape, const ad::Variable& prob, const Tensor& target) {
  Tensor loss({1}, bce_loss(prob.value(), target));
  return tape.record("bce_loss", {prob}, std::move(loss),
                     [prob, target](const Tensor& grad) mutable {
                       Tensor g = bce_loss_backward(prob.value(), target);
                       for (float& v : g.data()) v *= grad[0];
                       prob.accumulate_grad(g);
                     });
}

}  // namespace spikewright::nn
