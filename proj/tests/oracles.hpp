#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls the kernels under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "spikewright/events.hpp"
#include "spikewright/random.hpp"
#include "spikewright/tensor.hpp"

namespace oracle {

using spikewright::Rng;
using spikewright::Shape;
using spikewright::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Plain nested-loop cross-correlation with zero padding, accumulated in double.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                           std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, co, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x.at({s, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)})) *
                       w.at({o, c, u, v});
              }
          out.at({s, o, i, j}) = static_cast<float>(acc);
        }
  return out;
}

/// Scalar probe sum_i weights_i * y_i in double.
inline double project(const Tensor& y, const Tensor& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(y[i]) * weights[i];
  return acc;
}

/// Central differences of `loss` with respect to every entry of `theta`,
/// step h = rel_step * max(1, |theta_i|). `theta` is restored afterwards.
inline std::vector<double> finite_difference(Tensor& theta, const std::function<double()>& loss,
                                             double rel_step = 1e-2) {
  std::vector<double> grad(theta.numel());
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const float original = theta[i];
    const double h = rel_step * std::max(1.0, std::abs(static_cast<double>(original)));
    theta[i] = static_cast<float>(original + h);
    const double hi = static_cast<double>(theta[i]);
    const double up = loss();
    theta[i] = static_cast<float>(original - h);
    const double lo = static_cast<double>(theta[i]);
    const double down = loss();
    theta[i] = original;
    grad[i] = (up - down) / (hi - lo);  // actual float step
  }
  return grad;
}

/// max_i |a_i - n_i| / max_i max(|a_i|, |n_i|): relative error in the max norm.
inline double relative_error(const Tensor& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(analytic[i]) - numeric[i]));
    scale = std::max({scale, std::abs(static_cast<double>(analytic[i])), std::abs(numeric[i])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

/// Smooth stand-in for the Heaviside step whose derivative is the arctan
/// surrogate: sigma(x) = atan(pi/2 * alpha * x) / pi + 1/2.
inline double soft_step(double x, double alpha) {
  return std::atan(std::numbers::pi / 2.0 * alpha * x) / std::numbers::pi + 0.5;
}

/// Valid random stream: sorted timestamps, in-bounds coordinates.
inline spikewright::events::EventStream random_stream(Rng& rng, std::size_t max_events) {
  namespace ev = spikewright::events;
  const auto w = static_cast<std::uint16_t>(1 + rng.below(300));
  const auto h = static_cast<std::uint16_t>(1 + rng.below(300));
  const std::size_t n = rng.below(max_events + 1);
  std::vector<ev::DvsEvent> events(n);
  std::uint32_t t = static_cast<std::uint32_t>(rng.below(1000));
  for (ev::DvsEvent& e : events) {
    t += static_cast<std::uint32_t>(rng.below(3) == 0 ? 0 : rng.below(5000));
    e.t = t;
    e.x = static_cast<std::uint16_t>(rng.below(w));
    e.y = static_cast<std::uint16_t>(rng.below(h));
    e.polarity = rng.below(2) == 0 ? ev::Polarity::kOff : ev::Polarity::kOn;
  }
  return ev::EventStream(w, h, std::move(events));
}

/// Direct enumeration: events with start <= t < end.
inline std::size_t count_in_window(const spikewright::events::EventStream& s, std::uint64_t start,
                                   std::uint64_t end) {
  std::size_t n = 0;
  for (const auto& e : s.events()) n += e.t >= start && e.t < end;
  return n;
}

}  // namespace oracle
