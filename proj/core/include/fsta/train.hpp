#pragma once

// Surrogate-gradient BPTT training: loss, optimizers, epochs, evaluation.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsta/analysis.hpp"
#include "fsta/data.hpp"
#include "fsta/model.hpp"
#include "fsta/parameter.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

enum class OptimizerKind { sgd_momentum, adam };
// rate_ce: cross-entropy of the time-averaged logits. tet: mean over T of the
// per-timestep cross-entropy.
enum class LossKind { rate_ce, tet };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(LossKind kind);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.1;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::size_t timesteps = 4;
  LossKind loss = LossKind::rate_ce;
  bool cosine = true;
  bool augment = false;    // flip + crop (pad 4); meant for CIFAR-style data
  double grad_clip = 0.0;  // global-norm clip; 0 disables

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double firing_rate = 0.0;
  double seconds = 0.0;
  std::size_t samples = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  Metrics train;
  Metrics test;
};

// logits [T,N,K].
Tensor loss_rate_ce(const Tensor& logits, std::span<const int> labels);
Tensor loss_tet(const Tensor& logits, std::span<const int> labels);
Tensor compute_loss(LossKind kind, const Tensor& logits, std::span<const int> labels);

// Top-1 hits of the time-averaged logits.
std::size_t count_correct(const Tensor& logits, std::span<const int> labels);

struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first;   // momentum buffer / Adam m
  std::vector<std::vector<double>> second;  // Adam v

  bool operator==(const OptimizerState&) const = default;
};

// Updates every trainable parameter present in `grads`. Frozen parameters are
// never touched. Each updated value becomes a fresh leaf.
void optimizer_step(const ParameterList& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config, double lr);
void optimizer_step(const ParameterList& params, const Gradients& grads, OptimizerState& state,
                    const TrainConfig& config);

// Learning rate for `epoch` (0-based) under the config's schedule.
double scheduled_lr(const TrainConfig& config, std::size_t epoch);

struct TrainState {
  OptimizerState optimizer;
  std::mt19937_64 rng;
  std::size_t epoch = 0;

  explicit TrainState(std::uint64_t seed = 0) : rng(seed) {}
};

Metrics train_epoch(Network& net, const Dataset& data, const TrainConfig& config, TrainState& state);
Metrics train_epoch(Network& net, const Dataset& data, const TrainConfig& config);

// Inference mode, no gradients, no parameter or BN-statistic changes.
Metrics evaluate(Network& net, const Dataset& data, std::size_t batch_size = 64, FiringStats* firing = nullptr);

// Runs `config.epochs` epochs from `state`, evaluating on `test` after each.
std::vector<EpochRecord> fit(Network& net, const Dataset& train, const Dataset& test, const TrainConfig& config,
                             TrainState& state);

// Sum of all parameter values with position weights; changes when any value does.
double parameter_checksum(const ParameterList& params);

}  // namespace fsta
