#include "fsta/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fsta/ops.hpp"

namespace fsta {

namespace {

// Lifts [T,C,H,W] to [T,1,C,H,W]; passes [T,N,C,H,W] through.
Tensor as_batched(const Tensor& x, const char* who) {
  if (x.rank() == 5) return x;
  if (x.rank() == 4) return reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2), x.dim(3)});
  throw ShapeError(std::string(who) + ": expected [T,C,H,W] (or batched [T,N,C,H,W]), got " + to_string(x.shape()));
}

Tensor restore(const Tensor& y, const Tensor& like) { return like.rank() == 4 ? reshape(y, like.shape()) : y; }

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace

void FstaConfig::validate() const {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("fsta: kernel size must be odd and positive, got " + std::to_string(kernel_size));
  }
}

SpatialAttention::SpatialAttention(std::size_t kernel_size, std::mt19937_64& rng) : dct_(dct_basis(kernel_size)) {
  FstaConfig{kernel_size}.validate();
  const std::size_t freq = dct_.channels();
  dct_weights = Parameter("dct", dct_.weights, false);
  compress_w = Parameter("compress_w", fan_in_uniform({1, freq, 1, 1}, freq, rng));
  compress_b = Parameter("compress_b", Tensor::zeros({1}));
}

ParameterList SpatialAttention::parameters() { return {&dct_weights, &compress_w, &compress_b}; }

Tensor SpatialAttention::forward(const Tensor& x, AttentionTrace* trace) const {
  const Tensor xb = as_batched(x, "spatial attention");
  const std::size_t n = xb.dim(1), h = xb.dim(3), w = xb.dim(4);
  // Conv_dct is linear and the frequency maps are averaged over channels
  // afterwards, so averaging first gives the same Freq at 1/C of the cost.
  const Tensor x_mean = mean(xb, {0, 2}, true);  // [1,N,1,H,W]
  const Tensor freq = conv2d(reshape(x_mean, {n, 1, h, w}), dct_weights.value, 1, padding());  // [N,k*k,H,W]
  const Tensor logits = add(conv2d(freq, compress_w.value), compress_b.value);                   // [N,1,H,W]
  const Tensor freq_w = sigmoid(logits);
  if (trace) trace->freq_w = x.rank() == 4 ? reshape(freq_w, {h, w}).detach() : reshape(freq_w, {n, h, w}).detach();
  return restore(add(xb, mul(xb, freq_w)), x);
}

TemporalAttention::TemporalAttention(std::size_t timesteps, double a, double b, std::mt19937_64& rng)
    : timesteps_(timesteps) {
  if (timesteps == 0) throw std::invalid_argument("temporal attention: T must be at least 1");
  alpha = Parameter("alpha", Tensor::full({1}, a));
  beta = Parameter("beta", Tensor::full({1}, b));
  map_w = Parameter("temporal_w", fan_in_uniform({timesteps, timesteps}, timesteps, rng));
  map_b = Parameter("temporal_b", Tensor::zeros({timesteps}));
}

ParameterList TemporalAttention::parameters() { return {&alpha, &beta, &map_w, &map_b}; }

Tensor TemporalAttention::forward(const Tensor& x, AttentionTrace* trace) const {
  const Tensor xb = as_batched(x, "temporal attention");
  const std::size_t t = xb.dim(0), n = xb.dim(1);
  if (t != timesteps_) {
    throw ShapeError("temporal attention: built for T=" + std::to_string(timesteps_) + " but input has T=" +
                     std::to_string(t));
  }
  const Tensor f_avg = mean(xb, {3, 4});  // [T,N,C]
  const Tensor f_max = max(xb, {3, 4});   // [T,N,C]
  const Tensor m = add(mul(f_avg, alpha.value), mul(f_max, beta.value));
  const Tensor m_mean = mean(m, {2});  // [T,N]
  const Tensor z = add(matmul(map_w.value, m_mean), reshape(map_b.value, {t, 1}));
  const Tensor t_w = sigmoid(z);  // [T,N]
  if (trace) trace->t_w = x.rank() == 4 ? reshape(t_w, {t}).detach() : t_w.detach();
  return restore(add(xb, mul(xb, reshape(t_w, {t, n, 1, 1, 1}))), x);
}

FstaModule::FstaModule(std::size_t timesteps, const FstaConfig& config, std::mt19937_64& rng)
    : ta(timesteps, config.alpha, config.beta, rng), sa(config.kernel_size, rng), config_(config) {
  config.validate();
  scale_t = Parameter("scale_t", Tensor::full({1}, config.scale_t), config.learnable_scales);
  scale_s = Parameter("scale_s", Tensor::full({1}, config.scale_s), config.learnable_scales);
}

ParameterList FstaModule::parameters() {
  ParameterList out = ta.parameters();
  for (auto* p : sa.parameters()) out.push_back(p);
  out.push_back(&scale_t);
  out.push_back(&scale_s);
  return out;
}

std::size_t FstaModule::trainable_parameter_count() {
  std::size_t total = 0;
  for (auto* p : parameters())
    if (!p->name.ends_with("dct")) total += p->value.numel();
  return total;
}

Tensor FstaModule::forward(const Tensor& x, AttentionTrace* trace) const {
  const Tensor x_t = ta.forward(x, trace);
  const Tensor x_s = sa.forward(config_.mode == FusionMode::serial ? x_t : x, trace);
  return add(mul(x_t, scale_t.value), mul(x_s, scale_s.value));
}

Tensor sa_forward(const SpatialAttention& sa, const Tensor& x) { return sa.forward(x); }
Tensor ta_forward(const TemporalAttention& ta, const Tensor& x) { return ta.forward(x); }
Tensor fsta_forward(const FstaModule& m, const Tensor& x, AttentionTrace* trace) { return m.forward(x, trace); }

std::size_t fsta_parameter_count(std::size_t timesteps, std::size_t kernel_size) {
  return kernel_size * kernel_size + 1 + 2 + timesteps * timesteps + timesteps + 2;
}

}  // namespace fsta
