#include "spikewright/lif.hpp"

#include <algorithm>
#include <string>

#include "spikewright/error.hpp"

namespace spikewright::lif {

void LifParams::validate() const {
  if (!(tau > 1.0f)) throw std::invalid_argument("LIF tau must be > 1, got " + std::to_string(tau));
  if (!(alpha > 0.0f)) throw std::invalid_argument("LIF surrogate alpha must be > 0");
  if (!(v_threshold > e_rest)) {
    throw std::invalid_argument("LIF threshold must exceed the rest potential");
  }
}

namespace {

void init_state(LifState& state, const Shape& shape, float e_rest, const char* op) {
  if (state.fresh || state.v.empty()) {
    state.v = Tensor::full(shape, e_rest);
    state.fresh = false;
    return;
  }
  if (state.v.shape() != shape) {
    throw ShapeError(std::string(op) + ": state shape " + shape_to_string(state.v.shape()) +
                     " does not match input " + shape_to_string(shape));
  }
}

}  // namespace

StepResult lif_step(LifState& state, const Tensor& x, const LifParams& params) {
  params.validate();
  init_state(state, x.shape(), params.e_rest, "lif_step");
  const float inv_tau = 1.0f / params.tau;
  StepResult r{Tensor(x.shape()), Tensor(x.shape())};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = state.v[i];
    const float h = v + inv_tau * (params.e_rest - v + x[i]);
    const bool fire = h >= params.v_threshold;
    r.h[i] = h;
    r.spikes[i] = fire ? 1.0f : 0.0f;
    state.v[i] = fire ? params.e_rest : h;
  }
  return r;
}

Tensor surrogate_grad(const Tensor& x, float alpha) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = surrogate_grad(x[i], alpha);
  return out;
}

Tensor lif_forward_sequence(LifState& state, const Tensor& x_seq, std::size_t steps,
                            const LifParams& params, LifContext* context) {
  params.validate();
  if (steps == 0 || x_seq.rank() == 0 || x_seq.dim(0) % steps != 0) {
    throw ShapeError("lif_forward_sequence: leading dim of " + shape_to_string(x_seq.shape()) +
                     " is not a multiple of " + std::to_string(steps) + " steps");
  }
  const std::size_t width = x_seq.numel() / steps;
  Shape step_shape = x_seq.shape();
  step_shape[0] /= steps;
  init_state(state, step_shape, params.e_rest, "lif_forward_sequence");

  if (context) {
    context->params = params;
    context->steps = steps;
    context->width = width;
    context->h.assign(steps * width, 0.0f);
    context->spikes.assign(steps * width, 0.0f);
    context->v_prev.assign(steps * width, 0.0f);
  }
  const float inv_tau = 1.0f / params.tau;
  Tensor spikes(x_seq.shape());
  float* v = state.v.raw();
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t base = t * width;
    for (std::size_t i = 0; i < width; ++i) {
      const float vp = v[i];
      const float h = vp + inv_tau * (params.e_rest - vp + x_seq[base + i]);
      const bool fire = h >= params.v_threshold;
      spikes[base + i] = fire ? 1.0f : 0.0f;
      v[i] = fire ? params.e_rest : h;
      if (context) {
        context->h[base + i] = h;
        context->spikes[base + i] = spikes[base + i];
        context->v_prev[base + i] = vp;
      }
    }
  }
  return spikes;
}

LifGrads lif_backward(const LifContext& context, const Tensor& grad_spikes) {
  if (!context.valid()) {
    throw std::logic_error("lif_backward: no saved forward context");
  }
  const std::size_t steps = context.steps, width = context.width;
  if (grad_spikes.numel() != steps * width) {
    throw ShapeError("lif_backward: upstream gradient has " +
                     std::to_string(grad_spikes.numel()) + " values, expected " +
                     std::to_string(steps * width));
  }
  const LifParams& p = context.params;
  const float inv_tau = 1.0f / p.tau;
  const float keep = 1.0f - inv_tau;
  LifGrads grads{Tensor(grad_spikes.shape()), 0.0f};
  std::vector<float> grad_v(width, 0.0f);  // dL/dV_t flowing back from step t+1
  double grad_tau = 0.0;
  for (std::size_t t = steps; t-- > 0;) {
    const std::size_t base = t * width;
    for (std::size_t i = 0; i < width; ++i) {
      const float h = context.h[base + i];
      const float s = context.spikes[base + i];
      const float grad_h = grad_spikes[base + i] * surrogate_grad(h - p.v_threshold, p.alpha) +
                           grad_v[i] * (1.0f - s);
      grads.input[base + i] = grad_h * inv_tau;
      const float vp = context.v_prev[base + i];
      // dH/dtau = -(E_r - V_{t-1} + X_t) / tau^2 = -(H_t - V_{t-1}) / tau
      grad_tau -= static_cast<double>(grad_h) * (h - vp) * inv_tau;
      grad_v[i] = grad_h * keep;
    }
  }
  grads.tau = static_cast<float>(grad_tau);
  return grads;
}

ad::Variable lif_sequence(ad::Tape& tape, LifState& state, const ad::Variable& x_seq,
                          std::size_t steps, const LifParams& params, const ad::Variable& tau) {
  LifParams effective = params;
  if (tau.defined()) {
    if (tau.value().numel() != 1) throw ShapeError("lif_sequence: tau must be a [1] tensor");
    effective.tau = tau.value()[0];
  }
  auto context = std::make_shared<LifContext>();
  Tensor spikes = lif_forward_sequence(state, x_seq.value(), steps, effective,
                                       tape.recording() ? context.get() : nullptr);
  std::vector<ad::Variable> inputs{x_seq};
  if (tau.defined()) inputs.push_back(tau);
  return tape.record("lif", std::move(inputs), std::move(spikes),
                     [x_seq, tau, context](const Tensor& grad) mutable {
                       LifGrads g = lif_backward(*context, grad);
                       if (x_seq.requires_grad()) x_seq.accumulate_grad(g.input);
                       if (tau.defined() && tau.requires_grad()) {
                         tau.accumulate_grad(Tensor({1}, g.tau));
                       }
                     });
}

double synaptic_current(std::span<const double> spike_times, double tau_s, double t) {
  if (!(tau_s > 0.0)) throw std::invalid_argument("synaptic_current: tau_s must be > 0");
  if (!std::is_sorted(spike_times.begin(), spike_times.end())) {
    throw std::invalid_argument("synaptic_current: spike times must be sorted");
  }
  double current = 0.0;
  for (double ti : spike_times) {
    if (ti > t) break;
    current += std::exp(-(t - ti) / tau_s);
  }
  return current;
}

}  // namespace spikewright::lif
