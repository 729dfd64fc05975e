#pragma once

#include "fsta/tensor.hpp"

namespace fsta {

enum class Surrogate { triangular, sigmoid };

struct LifParams {
  double tau = 2.0;
  double v_th = 1.0;
  double v_reset = 0.0;
  double surrogate_width = 1.0;
  Surrogate surrogate = Surrogate::triangular;
  // Exclude the reset path's dependence on the spike from the backward pass.
  bool detach_reset = true;

  // Throws std::invalid_argument unless tau > 1, v_th > v_reset and width > 0.
  void validate() const;
  bool operator==(const LifParams&) const = default;
};

// Membrane potential after reset from the previous step.
struct LifState {
  Tensor h;

  static LifState resting(const Shape& shape, const LifParams& params);
};

struct LifStepResult {
  Tensor spikes;
  LifState next;
  Tensor potential;  // pre-reset membrane potential V
};

// How the forward pass turns V - v_th into a spike. `smoothed` replaces the
// Heaviside step by the surrogate's antiderivative; it exists so the surrogate
// backward rule can be checked against finite differences.
enum class FiringMode { heaviside, smoothed };

// 1 where x >= 0, else 0.
Tensor heaviside(const Tensor& x);
double heaviside(double x);

// Pseudo-derivative of the step at x. Triangular: max(0, 1 - |x|/w) / w.
double surrogate_grad(double x, double width, Surrogate kind = Surrogate::triangular);
Tensor surrogate_grad(const Tensor& x, double width, Surrogate kind = Surrogate::triangular);

// Antiderivative of surrogate_grad, rising from 0 to 1.
double surrogate_primitive(double x, double width, Surrogate kind = Surrogate::triangular);

// One discrete LIF update:
//   V  = H + (I - (H - V_reset)) / tau
//   S  = step(V - v_th)
//   H' = V_reset * S + V * (1 - S)
LifStepResult lif_step(const LifState& state, const Tensor& input, const LifParams& params,
                       FiringMode mode = FiringMode::heaviside);

// Applies lif_step along the leading axis of inputs [T, ...], threading the
// state. Differentiable with respect to the inputs and the initial state.
Tensor lif_sequence(const Tensor& inputs, const LifParams& params, const LifState& initial,
                    FiringMode mode = FiringMode::heaviside);

}  // namespace fsta
