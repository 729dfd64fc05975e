#include "fsta/neuron.hpp"

#include "fsta/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fsta {

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LifRun {
  std::vector<double> spikes;     // [T*M]
  std::vector<double> potential;  // [T*M]
  std::vector<double> final_h;    // [M]
};

LifRun run_lif(std::span<const double> input, std::size_t steps, std::span<const double> h0,
               const LifParams& p, FiringMode mode) {
  const std::size_t m = h0.size();
  LifRun run;
  run.spikes.resize(steps * m);
  run.potential.resize(steps * m);
  run.final_h.assign(h0.begin(), h0.end());
  const double leak = 1.0 / p.tau;
  for (std::size_t t = 0; t < steps; ++t) {
    const double* in = input.data() + t * m;
    double* s = run.spikes.data() + t * m;
    double* v = run.potential.data() + t * m;
    for (std::size_t i = 0; i < m; ++i) {
      const double h = run.final_h[i];
      v[i] = h + leak * (in[i] - (h - p.v_reset));
      const double x = v[i] - p.v_th;
      s[i] = mode == FiringMode::heaviside ? heaviside(x) : surrogate_primitive(x, p.surrogate_width, p.surrogate);
      run.final_h[i] = p.v_reset * s[i] + v[i] * (1.0 - s[i]);
    }
  }
  return run;
}

void check_input(const Tensor& inputs, const Shape& state_shape, std::size_t leading) {
  Shape expected;
  expected.reserve(state_shape.size() + leading);
  if (leading) expected.push_back(inputs.rank() ? inputs.dim(0) : 0);
  expected.insert(expected.end(), state_shape.begin(), state_shape.end());
  if (inputs.shape() != expected) {
    throw ShapeError("lif: input shape " + to_string(inputs.shape()) + " does not match state shape " +
                     to_string(state_shape));
  }
}

}  // namespace

void LifParams::validate() const {
  if (!(tau > 1.0)) throw std::invalid_argument("lif: tau must exceed 1, got " + std::to_string(tau));
  if (!(v_th > v_reset)) throw std::invalid_argument("lif: v_th must exceed v_reset");
  if (!(surrogate_width > 0.0)) throw std::invalid_argument("lif: surrogate width must be positive");
}

LifState LifState::resting(const Shape& shape, const LifParams& params) {
  return LifState{Tensor::full(shape, params.v_reset)};
}

double heaviside(double x) { return x >= 0.0 ? 1.0 : 0.0; }

Tensor heaviside(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = heaviside(x[i]);
  return Tensor(x.shape(), std::move(out));
}

double surrogate_grad(double x, double width, Surrogate kind) {
  switch (kind) {
    case Surrogate::triangular:
      return std::max(0.0, 1.0 - std::abs(x) / width) / width;
    case Surrogate::sigmoid: {
      const double k = 4.0 / width;
      const double s = logistic(k * x);
      return k * s * (1.0 - s);
    }
  }
  return 0.0;
}

Tensor surrogate_grad(const Tensor& x, double width, Surrogate kind) {
  if (!(width > 0.0)) throw std::invalid_argument("surrogate_grad: width must be positive");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = surrogate_grad(x[i], width, kind);
  return Tensor(x.shape(), std::move(out));
}

double surrogate_primitive(double x, double width, Surrogate kind) {
  switch (kind) {
    case Surrogate::triangular: {
      if (x <= -width) return 0.0;
      if (x >= width) return 1.0;
      const double w2 = 2.0 * width * width;
      if (x <= 0.0) return (x + width) * (x + width) / w2;
      return 1.0 - (width - x) * (width - x) / w2;
    }
    case Surrogate::sigmoid:
      return logistic(4.0 / width * x);
  }
  return 0.0;
}

Tensor lif_sequence(const Tensor& inputs, const LifParams& params, const LifState& initial, FiringMode mode) {
  params.validate();
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw ShapeError("lif_sequence: inputs need a leading time axis T >= 1");
  check_input(inputs, initial.h.shape(), 1);
  const std::size_t steps = inputs.dim(0);
  const std::size_t m = initial.h.numel();
  LifRun run = run_lif(inputs.values(), steps, initial.h.values(), params, mode);

  const bool keep = grad_enabled() && (inputs.requires_grad() || initial.h.requires_grad());
  std::vector<double> spikes_saved = keep ? run.spikes : std::vector<double>{};
  std::vector<double> potential_saved = keep ? std::move(run.potential) : std::vector<double>{};
  return Tensor::from_op(
      inputs.shape(), std::move(run.spikes), "lif_sequence", {inputs, initial.h},
      [steps, m, params, s = std::move(spikes_saved), v = std::move(potential_saved)](
          std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
        const double leak = 1.0 / params.tau;
        std::vector<double> g_h(m, 0.0);  // dL/dH_t flowing back from step t+1
        for (std::size_t t = steps; t-- > 0;) {
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t k = t * m + i;
            const double sg = surrogate_grad(v[k] - params.v_th, params.surrogate_width, params.surrogate);
            double dh_dv = 1.0 - s[k];
            if (!params.detach_reset) dh_dv += (params.v_reset - v[k]) * sg;
            const double g_v = g[k] * sg + g_h[i] * dh_dv;
            if (gin[0]) (*gin[0])[k] += g_v * leak;
            g_h[i] = g_v * (1.0 - leak);
          }
        }
        if (gin[1]) {
          for (std::size_t i = 0; i < m; ++i) (*gin[1])[i] += g_h[i];
        }
      });
}

LifStepResult lif_step(const LifState& state, const Tensor& input, const LifParams& params, FiringMode mode) {
  params.validate();
  check_input(input, state.h.shape(), 0);
  LifRun run = run_lif(input.values(), 1, state.h.values(), params, mode);
  Shape seq_shape = input.shape();
  seq_shape.insert(seq_shape.begin(), 1);
  Tensor spikes = reshape(lif_sequence(reshape(input, seq_shape), params, state, mode), input.shape());
  return LifStepResult{std::move(spikes), LifState{Tensor(input.shape(), std::move(run.final_h))},
                       Tensor(input.shape(), std::move(run.potential))};
}

}  // namespace fsta
