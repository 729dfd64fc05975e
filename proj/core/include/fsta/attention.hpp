#pragma once

// Frequency-based spatial-temporal attention for spike feature maps.
//
// Inputs are [T,C,H,W] for a single sample or [T,N,C,H,W] for a batch; every
// sample gets its own attention maps. Both submodules have the residual form
// X + X * w with w in (0,1), so zeros in X stay zero.

#include <cstddef>
#include <optional>
#include <random>

#include "fsta/frequency.hpp"
#include "fsta/parameter.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

enum class FusionMode { serial, parallel };

struct FstaConfig {
  std::size_t kernel_size = 7;  // odd; the DCT window
  FusionMode mode = FusionMode::serial;
  bool learnable_scales = true;
  double alpha = 0.5;
  double beta = 0.5;
  double scale_t = 0.5;
  double scale_s = 0.5;

  void validate() const;
  bool operator==(const FstaConfig&) const = default;
};

// Attention maps from the most recent traced forward call.
struct AttentionTrace {
  Tensor freq_w;  // [H,W] or [N,H,W]
  Tensor t_w;     // [T]   or [T,N]
};

class SpatialAttention {
 public:
  SpatialAttention(std::size_t kernel_size, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr) const;

  const DctBasis& dct() const { return dct_; }
  std::size_t padding() const { return (dct_.kernel_size - 1) / 2; }
  ParameterList parameters();

  Parameter dct_weights;  // frozen
  Parameter compress_w;   // [1, k*k, 1, 1]
  Parameter compress_b;   // [1]

 private:
  DctBasis dct_;
};

class TemporalAttention {
 public:
  TemporalAttention(std::size_t timesteps, double alpha, double beta, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr) const;

  std::size_t timesteps() const { return timesteps_; }
  ParameterList parameters();

  Parameter alpha;  // [1]
  Parameter beta;   // [1]
  Parameter map_w;  // [T,T]
  Parameter map_b;  // [T]

 private:
  std::size_t timesteps_;
};

class FstaModule {
 public:
  FstaModule(std::size_t timesteps, const FstaConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr) const;

  const FstaConfig& config() const { return config_; }
  std::size_t timesteps() const { return ta.timesteps(); }
  ParameterList parameters();
  std::size_t trainable_parameter_count();

  TemporalAttention ta;
  SpatialAttention sa;
  Parameter scale_t;  // [1]
  Parameter scale_s;  // [1]

 private:
  FstaConfig config_;
};

Tensor sa_forward(const SpatialAttention& sa, const Tensor& x);
Tensor ta_forward(const TemporalAttention& ta, const Tensor& x);
Tensor fsta_forward(const FstaModule& m, const Tensor& x, AttentionTrace* trace = nullptr);

// k*k + 1 (compress) + 2 (alpha, beta) + T*T + T (temporal map) + 2 (scales).
std::size_t fsta_parameter_count(std::size_t timesteps, std::size_t kernel_size);

}  // namespace fsta
