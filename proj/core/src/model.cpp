#include "fsta/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "fsta/ops.hpp"

namespace fsta {

namespace {

class BuildError : public std::invalid_argument {
 public:
  BuildError(std::size_t index, const LayerSpec& spec, const std::string& what)
      : std::invalid_argument("build_network: layer " + std::to_string(index) + " (" +
                              std::string(to_string(spec.kind)) + "): " + what) {}
};

bool is_fixed_kernel(const Parameter& p) { return !p.trainable && p.name.ends_with("dct"); }

ConvUnit make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                   std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  ConvUnit unit{Parameter(name + ".weight", Tensor::normal({cout, cin, k, k}, 0.0, stddev, rng)),
                BatchNormState(cout, name + ".bn"), stride, k / 2};
  return unit;
}

std::size_t conv_out(std::size_t extent, std::size_t k, std::size_t stride, std::size_t pad) {
  return (extent + 2 * pad - k) / stride + 1;
}

Tensor run_conv(ConvUnit& unit, const Tensor& x, bool training) {
  return batch_norm(conv2d(x, unit.weight.value, unit.stride, unit.padding), unit.bn, training);
}

// z is [T*N, ...]; returns spikes of the same shape.
Tensor run_lif(const Tensor& z, std::size_t timesteps, const LifParams& params) {
  const std::size_t per_step = z.numel() / timesteps;
  const Tensor seq = reshape(z, {timesteps, per_step});
  const Tensor spikes = lif_sequence(seq, params, LifState::resting({per_step}, params));
  return reshape(spikes, z.shape());
}

void record(ForwardTrace* trace, const std::string& name, std::size_t layer, const Tensor& spikes,
            std::size_t timesteps) {
  if (!trace) return;
  Shape shape = spikes.shape();
  const std::size_t batch = shape[0] / timesteps;
  shape[0] = batch;
  shape.insert(shape.begin(), timesteps);
  trace->spikes.push_back(SpikeRecord{name, layer, Tensor(shape, {spikes.values().begin(), spikes.values().end()})});
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv_bn_lif: return "conv_bn_lif";
    case LayerKind::residual_block: return "residual_block";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::classifier: return "classifier";
    case LayerKind::fsta: return "fsta";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::conv_bn_lif, LayerKind::residual_block, LayerKind::avgpool, LayerKind::flatten,
                    LayerKind::classifier, LayerKind::fsta}) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t channels, std::size_t kernel, std::size_t stride) {
  return LayerSpec{LayerKind::conv_bn_lif, channels, kernel, stride, {}};
}
LayerSpec LayerSpec::residual(std::size_t channels, std::size_t stride) {
  return LayerSpec{LayerKind::residual_block, channels, 3, stride, {}};
}
LayerSpec LayerSpec::avgpool(std::size_t window) { return LayerSpec{LayerKind::avgpool, 0, window, 1, {}}; }
LayerSpec LayerSpec::flatten() { return LayerSpec{LayerKind::flatten, 0, 0, 1, {}}; }
LayerSpec LayerSpec::classifier(std::size_t classes) { return LayerSpec{LayerKind::classifier, classes, 0, 1, {}}; }
LayerSpec LayerSpec::attention(const FstaConfig& config) { return LayerSpec{LayerKind::fsta, 0, 0, 1, config}; }

std::size_t NetworkSpec::classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerKind::classifier) return it->channels;
  return 0;
}

std::vector<std::size_t> NetworkSpec::stage_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::conv_bn_lif || layers[i].kind == LayerKind::residual_block) out.push_back(i);
  return out;
}

bool NetworkSpec::operator==(const NetworkSpec& o) const {
  return name == o.name && in_channels == o.in_channels && in_height == o.in_height && in_width == o.in_width &&
         timesteps == o.timesteps && layers == o.layers && fsta_placement == o.fsta_placement &&
         residual == o.residual && neuron == o.neuron;
}

NetworkSpec snn_tiny(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t classes,
                     std::size_t timesteps) {
  NetworkSpec spec;
  spec.name = "snn-tiny";
  spec.in_channels = in_channels;
  spec.in_height = height;
  spec.in_width = width;
  spec.timesteps = timesteps;
  spec.layers = {LayerSpec::conv(16),     LayerSpec::conv(32, 3, 2), LayerSpec::residual(32),
                 LayerSpec::residual(32), LayerSpec::avgpool(0),     LayerSpec::flatten(),
                 LayerSpec::classifier(classes)};
  return spec;
}

NetworkSpec resnet20_snn(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t classes,
                         std::size_t timesteps) {
  NetworkSpec spec;
  spec.name = "resnet20-snn";
  spec.in_channels = in_channels;
  spec.in_height = height;
  spec.in_width = width;
  spec.timesteps = timesteps;
  spec.layers.push_back(LayerSpec::conv(64));
  for (std::size_t width_c : {64u, 128u, 256u}) {
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t stride = (b == 0 && width_c != 64) ? 2 : 1;
      spec.layers.push_back(LayerSpec::residual(width_c, stride));
    }
  }
  spec.layers.push_back(LayerSpec::avgpool(0));
  spec.layers.push_back(LayerSpec::flatten());
  spec.layers.push_back(LayerSpec::classifier(classes));
  return spec;
}

NetworkSpec catalog_network(std::string_view name, std::size_t in_channels, std::size_t height, std::size_t width,
                            std::size_t classes, std::size_t timesteps) {
  if (name == "snn-tiny") return snn_tiny(in_channels, height, width, classes, timesteps);
  if (name == "resnet20-snn") return resnet20_snn(in_channels, height, width, classes, timesteps);
  throw std::invalid_argument("unknown network '" + std::string(name) + "' (known: snn-tiny, resnet20-snn)");
}

std::vector<std::size_t> default_fsta_placement(const NetworkSpec& spec) {
  std::vector<std::size_t> out;
  const auto stages = spec.stage_layers();
  for (std::size_t s = 0; s < stages.size(); ++s)
    if (spec.layers[stages[s]].kind == LayerKind::residual_block) out.push_back(s);
  return out;
}

NetworkSpec insert_fsta(const NetworkSpec& spec, std::span<const std::size_t> placement, const FstaConfig& config) {
  if (placement.empty()) return spec;
  config.validate();
  const auto stages = spec.stage_layers();
  std::set<std::size_t> chosen;
  for (std::size_t s : placement) {
    if (s >= stages.size()) {
      throw std::out_of_range("insert_fsta: stage " + std::to_string(s) + " out of range (network has " +
                              std::to_string(stages.size()) + " spiking stages)");
    }
    chosen.insert(s);
  }
  NetworkSpec out = spec;
  out.layers.clear();
  std::size_t stage = 0;
  for (const auto& layer : spec.layers) {
    out.layers.push_back(layer);
    if (layer.kind == LayerKind::conv_bn_lif || layer.kind == LayerKind::residual_block) {
      if (chosen.contains(stage)) out.layers.push_back(LayerSpec::attention(config));
      ++stage;
    }
  }
  std::set<std::size_t> merged(spec.fsta_placement.begin(), spec.fsta_placement.end());
  merged.insert(chosen.begin(), chosen.end());
  out.fsta_placement.assign(merged.begin(), merged.end());
  return out;
}

BatchNormState::BatchNormState(std::size_t channels, const std::string& prefix)
    : scale(prefix + ".scale", Tensor::ones({channels})),
      shift(prefix + ".shift", Tensor::zeros({channels})),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training) {
  if (x.rank() != 4 || x.dim(1) != state.channels()) {
    throw ShapeError("batch_norm: input " + to_string(x.shape()) + " does not match " +
                     std::to_string(state.channels()) + " channels");
  }
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = b * hw;
  const auto xv = x.values();
  const auto gamma = state.scale.value.values();
  const auto beta = state.shift.value.values();

  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = xv.data() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) mu[ch] += p[i];
      }
    for (auto& m : mu) m /= static_cast<double>(count);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = xv.data() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) var[ch] += (p[i] - mu[ch]) * (p[i] - mu[ch]);
      }
    for (auto& v : var) v /= static_cast<double>(count);
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu[ch];
      state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * var[ch] * unbias;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + state.eps);
  std::vector<double> out(x.numel());
  std::vector<double> xhat(training ? x.numel() : 0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (xv[base + i] - mu[ch]) * inv_std[ch];
        if (training) xhat[base + i] = xh;
        out[base + i] = gamma[ch] * xh + beta[ch];
      }
    }
  if (!training) {
    xhat.resize(x.numel());
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) xhat[base + i] = (xv[base + i] - mu[ch]) * inv_std[ch];
      }
  }

  std::vector<double> gamma_saved(gamma.begin(), gamma.end());
  return Tensor::from_op(
      x.shape(), std::move(out), "batch_norm", {x, state.scale.value, state.shift.value},
      [b, c, hw, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std),
       gamma = std::move(gamma_saved)](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g[ch] += g[base + i];
              sum_gx[ch] += g[base + i] * xhat[base + i];
            }
          }
        if (gin[1])
          for (std::size_t ch = 0; ch < c; ++ch) (*gin[1])[ch] += sum_gx[ch];
        if (gin[2])
          for (std::size_t ch = 0; ch < c; ++ch) (*gin[2])[ch] += sum_g[ch];
        if (!gin[0]) return;
        auto& gx = *gin[0];
        const double m = static_cast<double>(count);
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (n * c + ch) * hw;
            const double k = gamma[ch] * inv_std[ch];
            for (std::size_t i = 0; i < hw; ++i) {
              if (training) {
                gx[base + i] += k / m * (m * g[base + i] - sum_g[ch] - xhat[base + i] * sum_gx[ch]);
              } else {
                gx[base + i] += k * g[base + i];
              }
            }
          }
      });
}

const SpikeRecord* ForwardTrace::find(std::string_view name) const {
  for (const auto& r : spikes)
    if (r.name == name) return &r;
  return nullptr;
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.layers.empty()) throw std::invalid_argument("build_network: network '" + spec.name + "' has no layers");
  if (spec.timesteps == 0) throw std::invalid_argument("build_network: timesteps must be at least 1");
  if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0) {
    throw std::invalid_argument("build_network: input extents must be positive");
  }
  spec.neuron.validate();
  if (spec.layers.back().kind != LayerKind::classifier) {
    throw BuildError(spec.layers.size() - 1, spec.layers.back(), "the last layer must be a classifier");
  }

  std::mt19937_64 rng(seed);
  Network net;
  net.spec_ = spec;
  Shape shape{spec.in_channels, spec.in_height, spec.in_width};
  std::size_t conv_count = 0, res_count = 0, fsta_count = 0;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    Layer layer;
    layer.spec = ls;
    layer.in_shape = shape;
    const bool spatial = shape.size() == 3;
    switch (ls.kind) {
      case LayerKind::conv_bn_lif: {
        if (!spatial) throw BuildError(i, ls, "needs a [C,H,W] input, got " + to_string(shape));
        if (ls.channels == 0 || ls.kernel == 0 || ls.stride == 0) throw BuildError(i, ls, "channels, kernel and stride must be positive");
        const std::size_t pad = ls.kernel / 2;
        if (ls.kernel > shape[1] + 2 * pad || ls.kernel > shape[2] + 2 * pad) {
          throw BuildError(i, ls, "kernel " + std::to_string(ls.kernel) + " exceeds input " + to_string(shape));
        }
        layer.name = "conv" + std::to_string(conv_count++);
        layer.conv1 = make_conv(layer.name, shape[0], ls.channels, ls.kernel, ls.stride, rng);
        shape = {ls.channels, conv_out(shape[1], ls.kernel, ls.stride, pad), conv_out(shape[2], ls.kernel, ls.stride, pad)};
        break;
      }
      case LayerKind::residual_block: {
        if (!spatial) throw BuildError(i, ls, "needs a [C,H,W] input, got " + to_string(shape));
        if (ls.channels == 0 || ls.stride == 0) throw BuildError(i, ls, "channels and stride must be positive");
        layer.name = "res" + std::to_string(res_count++);
        layer.conv1 = make_conv(layer.name + ".conv1", shape[0], ls.channels, 3, ls.stride, rng);
        layer.conv2 = make_conv(layer.name + ".conv2", ls.channels, ls.channels, 3, 1, rng);
        if (ls.stride != 1 || ls.channels != shape[0]) {
          layer.shortcut = make_conv(layer.name + ".shortcut", shape[0], ls.channels, 1, ls.stride, rng);
        }
        shape = {ls.channels, conv_out(shape[1], 3, ls.stride, 1), conv_out(shape[2], 3, ls.stride, 1)};
        break;
      }
      case LayerKind::fsta: {
        if (!spatial) throw BuildError(i, ls, "needs a [C,H,W] input, got " + to_string(shape));
        try {
          ls.fsta.validate();
        } catch (const std::invalid_argument& e) {
          throw BuildError(i, ls, e.what());
        }
        layer.name = "fsta" + std::to_string(fsta_count++);
        layer.attention.emplace(spec.timesteps, ls.fsta, rng);
        for (auto* p : layer.attention->parameters()) p->name = layer.name + "." + p->name;
        break;
      }
      case LayerKind::avgpool: {
        if (!spatial) throw BuildError(i, ls, "needs a [C,H,W] input, got " + to_string(shape));
        layer.name = "pool";
        if (ls.kernel == 0) {
          shape = {shape[0], 1, 1};
        } else {
          if (ls.kernel > shape[1] || ls.kernel > shape[2]) throw BuildError(i, ls, "window exceeds input " + to_string(shape));
          shape = {shape[0], shape[1] / ls.kernel, shape[2] / ls.kernel};
        }
        break;
      }
      case LayerKind::flatten:
        layer.name = "flatten";
        shape = {numel(shape)};
        break;
      case LayerKind::classifier: {
        if (shape.size() != 1) throw BuildError(i, ls, "needs a flat input (add flatten), got " + to_string(shape));
        if (ls.channels == 0) throw BuildError(i, ls, "class count must be positive");
        layer.name = "fc";
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        layer.fc_w = Parameter("fc.weight", Tensor::uniform({ls.channels, shape[0]}, -bound, bound, rng));
        layer.fc_b = Parameter("fc.bias", Tensor::zeros({ls.channels}));
        shape = {ls.channels};
        break;
      }
    }
    layer.out_shape = shape;
    net.layers_.push_back(std::move(layer));
  }
  return net;
}

ForwardResult Network::forward(const Tensor& input, bool training, bool trace_enabled) {
  const Shape expected{spec_.in_channels, spec_.in_height, spec_.in_width};
  if (input.rank() != 4 || Shape(input.shape().begin() + 1, input.shape().end()) != expected) {
    throw ShapeError("forward: expected input [N," + to_string(expected).substr(1) + ", got " + to_string(input.shape()));
  }
  const std::size_t steps = spec_.timesteps;
  const std::size_t batch = input.dim(0);
  ForwardResult result;
  ForwardTrace* trace = nullptr;
  if (trace_enabled) {
    result.trace.emplace();
    trace = &*result.trace;
    trace->timesteps = steps;
    trace->batch = batch;
  }

  Tensor x = tile_leading(input, steps);  // [T*N, C, H, W]
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = layers_[i];
    switch (layer.spec.kind) {
      case LayerKind::conv_bn_lif:
        x = run_lif(run_conv(*layer.conv1, x, training), steps, spec_.neuron);
        record(trace, layer.name, i, x, steps);
        break;
      case LayerKind::residual_block: {
        const Tensor s1 = run_lif(run_conv(*layer.conv1, x, training), steps, spec_.neuron);
        record(trace, layer.name + ".lif1", i, s1, steps);
        const Tensor z2 = run_conv(*layer.conv2, s1, training);
        const Tensor skip = layer.shortcut ? run_conv(*layer.shortcut, x, training) : x;
        if (spec_.residual == ResidualMode::membrane) {
          x = run_lif(add(z2, skip), steps, spec_.neuron);
          record(trace, layer.name + ".lif2", i, x, steps);
        } else {
          const Tensor s2 = run_lif(z2, steps, spec_.neuron);
          record(trace, layer.name + ".lif2", i, s2, steps);
          x = add(s2, skip);
        }
        break;
      }
      case LayerKind::fsta: {
        const Shape folded = x.shape();
        const Tensor seq = reshape(x, {steps, batch, folded[1], folded[2], folded[3]});
        AttentionTrace at;
        x = reshape(layer.attention->forward(seq, trace ? &at : nullptr), folded);
        if (trace) trace->attention.emplace_back(layer.name, std::move(at));
        break;
      }
      case LayerKind::avgpool:
        x = layer.spec.kernel == 0 ? mean(x, {2, 3}, true) : avg_pool2d(x, layer.spec.kernel);
        break;
      case LayerKind::flatten:
        x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
        break;
      case LayerKind::classifier:
        x = linear(x, layer.fc_w->value, layer.fc_b->value);
        break;
    }
  }
  result.logits = reshape(x, {steps, batch, x.dim(1)});
  if (trace) trace->logits = result.logits.detach();
  return result;
}

ParameterList Network::parameters() {
  ParameterList out;
  auto add_conv = [&](std::optional<ConvUnit>& c) {
    if (!c) return;
    out.push_back(&c->weight);
    out.push_back(&c->bn.scale);
    out.push_back(&c->bn.shift);
  };
  for (auto& layer : layers_) {
    add_conv(layer.conv1);
    add_conv(layer.conv2);
    add_conv(layer.shortcut);
    if (layer.attention)
      for (auto* p : layer.attention->parameters()) out.push_back(p);
    if (layer.fc_w) out.push_back(&*layer.fc_w);
    if (layer.fc_b) out.push_back(&*layer.fc_b);
  }
  return out;
}

std::vector<BatchNormState*> Network::batch_norms() {
  std::vector<BatchNormState*> out;
  for (auto& layer : layers_)
    for (auto* c : {&layer.conv1, &layer.conv2, &layer.shortcut})
      if (*c) out.push_back(&(*c)->bn);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (auto* p : const_cast<Network*>(this)->parameters())
    if (!is_fixed_kernel(*p)) total += p->value.numel();
  return total;
}

std::size_t Network::frozen_parameter_count() const {
  std::size_t total = 0;
  for (auto* p : const_cast<Network*>(this)->parameters())
    if (is_fixed_kernel(*p)) total += p->value.numel();
  return total;
}

}  // namespace fsta
