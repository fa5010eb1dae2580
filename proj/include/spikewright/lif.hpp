#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "spikewright/autodiff.hpp"
#include "spikewright/tensor.hpp"

namespace spikewright::lif {

struct LifParams {
  float tau = 2.0f;          // membrane time constant in steps, > 1
  float v_threshold = 1.0f;
  float e_rest = 0.0f;       // resting and reset potential
  float alpha = 2.0f;        // surrogate width
  bool tau_trainable = false;

  /// Throws std::invalid_argument when tau <= 1, alpha <= 0 or v_threshold <= e_rest.
  void validate() const;
};

/// Membrane potentials carried across timesteps of one sample. A fresh state
/// has no potentials yet; the first step initializes them to e_rest.
struct LifState {
  Tensor v;
  bool fresh = true;

  void reset() {
    v = Tensor{};
    fresh = true;
  }
};

struct StepResult {
  Tensor spikes;  // S_t in {0,1}
  Tensor h;       // potential before reset
};

/// One discrete update:
///   H_t = V_{t-1} + (E_r - V_{t-1} + X_t) / tau
///   S_t = [H_t >= V_th]
///   V_t = H_t (1 - S_t) + E_r S_t
StepResult lif_step(LifState& state, const Tensor& x, const LifParams& params);

/// Derivative of the arctan surrogate, alpha / (2 (1 + (pi/2 alpha x)^2)).
inline float surrogate_grad(float x, float alpha) {
  const float u = std::numbers::pi_v<float> / 2.0f * alpha * x;
  return alpha / (2.0f * (1.0f + u * u));
}

Tensor surrogate_grad(const Tensor& x, float alpha);

/// Per-timestep forward record needed for back-propagation through time.
struct LifContext {
  LifParams params;
  std::size_t steps = 0;
  std::size_t width = 0;        // neurons per step
  std::vector<float> h;         // [steps * width]
  std::vector<float> spikes;    // [steps * width]
  std::vector<float> v_prev;    // V_{t-1} per step, [steps * width]

  bool valid() const { return steps > 0 && h.size() == steps * width; }
};

struct LifGrads {
  Tensor input;  // same layout as the forward input sequence
  float tau = 0.0f;
};

/// Runs `steps` consecutive updates over x_seq, whose leading dimension is
/// steps * k laid out time-major. Returns the spike sequence in the same
/// layout and leaves V_T in `state`.
Tensor lif_forward_sequence(LifState& state, const Tensor& x_seq, std::size_t steps,
                            const LifParams& params, LifContext* context = nullptr);

/// BPTT through the recurrence V_{t-1} -> H_t. The Heaviside derivative is
/// replaced by surrogate_grad(H_t - V_th); the reset indicator in
/// V_t = H_t (1 - S_t) + E_r S_t is treated as a constant.
LifGrads lif_backward(const LifContext& context, const Tensor& grad_spikes);

/// Tape-recording version. When `tau` is defined it must hold a [1] tensor
/// and overrides params.tau; its gradient is accumulated if it requires one.
ad::Variable lif_sequence(ad::Tape& tape, LifState& state, const ad::Variable& x_seq,
                          std::size_t steps, const LifParams& params,
                          const ad::Variable& tau = {});

// ---------------------------------------------------------------------------
// Continuous reference model.

template <std::floating_point Real>
struct Trajectory {
  std::vector<Real> time;         // sample times, including t = 0
  std::vector<Real> potential;    // V after each step (and V0 at t = 0)
  std::vector<Real> spike_times;
};

/// Explicit Euler integration of tau dV/dt = (E_r - V) + X(t) with threshold
/// and hard reset. X(t) is piecewise constant: input[i] holds on
/// [i * sample_interval, (i+1) * sample_interval). Accuracy needs dt well
/// below tau; with dt = 1 and sample_interval = 1 each step is exactly the
/// discrete update, performed in `Real`.
template <std::floating_point Real>
Trajectory<Real> lif_reference_integrate(const LifParams& params, std::span<const Real> input,
                                         Real sample_interval, Real dt, Real duration,
                                         Real v0) {
  if (!(dt > Real(0))) throw std::invalid_argument("lif_reference_integrate: dt must be > 0");
  if (!(sample_interval > Real(0))) {
    throw std::invalid_argument("lif_reference_integrate: sample interval must be > 0");
  }
  params.validate();
  const auto steps = static_cast<std::size_t>(std::llround(duration / dt));
  const Real tau = params.tau, e_rest = params.e_rest, v_th = params.v_threshold;
  const Real gain = dt / tau;

  Trajectory<Real> traj;
  traj.time.reserve(steps + 1);
  traj.potential.reserve(steps + 1);
  traj.time.push_back(Real(0));
  traj.potential.push_back(v0);
  Real v = v0;
  for (std::size_t n = 0; n < steps; ++n) {
    const Real t = static_cast<Real>(n) * dt;
    auto sample = static_cast<std::size_t>(std::floor(t / sample_interval + Real(1e-6)));
    const Real x = input.empty() ? Real(0) : input[std::min(sample, input.size() - 1)];
    const Real h = v + gain * (e_rest - v + x);
    const Real t_next = static_cast<Real>(n + 1) * dt;
    if (h >= v_th) {
      v = e_rest;
      traj.spike_times.push_back(t_next);
    } else {
      v = h;
    }
    traj.time.push_back(t_next);
    traj.potential.push_back(v);
  }
  return traj;
}

/// Causal exponential synapse: I(t) = sum over t_i <= t of exp(-(t - t_i) / tau_s).
/// Spike times must be nondecreasing.
double synaptic_current(std::span<const double> spike_times, double tau_s, double t);

}  // namespace spikewright::lif
