#include "fsta/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "fsta/ops.hpp"

namespace fsta {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd_momentum"; }
std::string_view to_string(LossKind kind) { return kind == LossKind::tet ? "tet" : "rate_ce"; }

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be at least 1");
  if (timesteps == 0) throw std::invalid_argument("train: timesteps must be at least 1");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train: momentum must lie in [0,1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("train: Adam betas must lie in [0,1)");
  }
  if (grad_clip < 0.0) throw std::invalid_argument("train: grad_clip must be non-negative");
}

namespace {

void check_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 3) throw ShapeError("loss: expected logits [T,N,K], got " + to_string(logits.shape()));
  if (labels.size() != logits.dim(1)) {
    throw std::invalid_argument("loss: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(logits.dim(1)));
  }
}

}  // namespace

Tensor loss_rate_ce(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits, labels);
  return softmax_cross_entropy(mean(logits, {0}), labels);
}

Tensor loss_tet(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits, labels);
  const std::size_t t = logits.dim(0), n = logits.dim(1), k = logits.dim(2);
  std::vector<int> tiled;
  tiled.reserve(t * n);
  for (std::size_t i = 0; i < t; ++i) tiled.insert(tiled.end(), labels.begin(), labels.end());
  // CE averaged over T*N rows equals the mean over T of per-step CE.
  return softmax_cross_entropy(reshape(logits, {t * n, k}), tiled);
}

Tensor compute_loss(LossKind kind, const Tensor& logits, std::span<const int> labels) {
  return kind == LossKind::tet ? loss_tet(logits, labels) : loss_rate_ce(logits, labels);
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  check_logits(logits, labels);
  const std::size_t t = logits.dim(0), n = logits.dim(1), k = logits.dim(2);
  const auto v = logits.values();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t s_t = 0; s_t < t; ++s_t) s += v[(s_t * n + i) * k + c];
      if (s > best_v) {
        best_v = s;
        best = c;
      }
    }
    hits += static_cast<int>(best) == labels[i];
  }
  return hits;
}

void optimizer_step(const ParameterList& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config, double lr) {
  if (state.first.size() != params.size()) {
    state.first.assign(params.size(), {});
    state.second.assign(params.size(), {});
  }
  ++state.step;

  double scale = 1.0;
  if (config.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto* p : params)
      if (p->trainable && grads.has(p->value))
        for (double g : grads.values(p->value)) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config.grad_clip) scale = config.grad_clip / norm;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable || !grads.has(p.value)) continue;
    const auto g = grads.values(p.value);
    const auto w = p.value.values();
    if (g.size() != w.size()) {
      throw ShapeError("optimizer_step: gradient of '" + p.name + "' has " + std::to_string(g.size()) +
                       " entries, parameter has " + std::to_string(w.size()));
    }
    std::vector<double> next(w.begin(), w.end());
    auto& m = state.first[i];
    if (m.size() != w.size()) m.assign(w.size(), 0.0);
    if (config.optimizer == OptimizerKind::sgd_momentum) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = config.momentum * m[j] + scale * g[j];
        next[j] -= lr * (m[j] + config.weight_decay * w[j]);
      }
    } else {
      auto& v = state.second[i];
      if (v.size() != w.size()) v.assign(w.size(), 0.0);
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = scale * g[j] + config.weight_decay * w[j];
        m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
        v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
        next[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.adam_eps);
      }
    }
    p.value = Tensor(p.value.shape(), std::move(next), true);
  }
}

void optimizer_step(const ParameterList& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config) {
  optimizer_step(params, grads, state, config, config.lr);
}

double scheduled_lr(const TrainConfig& config, std::size_t epoch) {
  if (!config.cosine || config.epochs <= 1) return config.lr;
  const double progress = static_cast<double>(std::min(epoch, config.epochs)) / static_cast<double>(config.epochs);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

Metrics train_epoch(Network& net, const Dataset& data, const TrainConfig& config, TrainState& state) {
  config.validate();
  if (data.size() == 0) throw std::invalid_argument("train_epoch: dataset is empty");
  const auto start = std::chrono::steady_clock::now();
  const double lr = scheduled_lr(config, state.epoch);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);
  const std::uint64_t aug_seed = state.rng();

  ParameterList params = net.parameters();
  Metrics m;
  double loss_sum = 0.0;
  std::size_t hits = 0;
  FiringStats firing;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
    const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
    Dataset batch = data.gather(std::span(order).subspan(b0, b1 - b0));
    if (config.augment) batch = augment_flip_crop(batch, 4, aug_seed + b0);
    ForwardResult out = net.forward(batch.images, true, true);
    const Tensor loss = compute_loss(config.loss, out.logits, batch.labels);
    if (!std::isfinite(loss.item())) throw std::runtime_error("train_epoch: loss became non-finite");
    const Gradients grads = backward(loss);
    optimizer_step(params, grads, state.optimizer, config, lr);
    loss_sum += loss.item() * static_cast<double>(batch.size());
    hits += count_correct(out.logits, batch.labels);
    accumulate(firing, firing_rate(*out.trace));
  }
  ++state.epoch;
  m.samples = data.size();
  m.loss = loss_sum / static_cast<double>(data.size());
  m.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  m.firing_rate = firing.network_rate;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

Metrics train_epoch(Network& net, const Dataset& data, const TrainConfig& config) {
  TrainState state(config.seed);
  return train_epoch(net, data, config, state);
}

Metrics evaluate(Network& net, const Dataset& data, std::size_t batch_size, FiringStats* firing_out) {
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be at least 1");
  const auto start = std::chrono::steady_clock::now();
  NoGradGuard guard;
  Metrics m;
  if (data.size() == 0) return m;
  double loss_sum = 0.0;
  std::size_t hits = 0;
  FiringStats firing;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t b0 = 0; b0 < idx.size(); b0 += batch_size) {
    const std::size_t b1 = std::min(idx.size(), b0 + batch_size);
    const Dataset batch = data.gather(std::span(idx).subspan(b0, b1 - b0));
    ForwardResult out = net.forward(batch.images, false, true);
    loss_sum += loss_rate_ce(out.logits, batch.labels).item() * static_cast<double>(batch.size());
    hits += count_correct(out.logits, batch.labels);
    accumulate(firing, firing_rate(*out.trace));
  }
  m.samples = data.size();
  m.loss = loss_sum / static_cast<double>(data.size());
  m.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  m.firing_rate = firing.network_rate;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (firing_out) *firing_out = std::move(firing);
  return m;
}

std::vector<EpochRecord> fit(Network& net, const Dataset& train, const Dataset& test, const TrainConfig& config,
                             TrainState& state) {
  std::vector<EpochRecord> history;
  while (state.epoch < config.epochs) {
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.lr = scheduled_lr(config, state.epoch);
    rec.train = train_epoch(net, train, config, state);
    rec.test = evaluate(net, test, std::max<std::size_t>(config.batch_size, 64));
    history.push_back(rec);
  }
  return history;
}

double parameter_checksum(const ParameterList& params) {
  double s = 0.0;
  double k = 1.0;
  for (auto* p : params)
    for (double v : p->value.values()) {
      s += v * k;
      k = k * 1.000001 + 1e-3;
    }
  return s;
}

}  // namespace fsta
