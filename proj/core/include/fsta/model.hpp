#pragma once

// Spiking network construction and execution.
//
// Activations travel time-major as [T*N, C, H, W]: the static input image is
// repeated at every timestep (direct encoding), stateless layers run on the
// folded batch, and LIF layers unfold the leading axis to thread membrane
// state through time.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsta/attention.hpp"
#include "fsta/neuron.hpp"
#include "fsta/parameter.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

enum class LayerKind { conv_bn_lif, residual_block, avgpool, flatten, classifier, fsta };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::conv_bn_lif;
  std::size_t channels = 0;  // output channels, or classes for the classifier
  std::size_t kernel = 3;    // conv window; pooling window (0 = global)
  std::size_t stride = 1;
  FstaConfig fsta;

  static LayerSpec conv(std::size_t channels, std::size_t kernel = 3, std::size_t stride = 1);
  static LayerSpec residual(std::size_t channels, std::size_t stride = 1);
  static LayerSpec avgpool(std::size_t window = 0);
  static LayerSpec flatten();
  static LayerSpec classifier(std::size_t classes);
  static LayerSpec attention(const FstaConfig& config);

  bool operator==(const LayerSpec&) const = default;
};

// How a residual block joins its shortcut: `membrane` adds the shortcut to
// the second LIF's input current (output stays binary); `spike` adds it to
// the output spikes.
enum class ResidualMode { membrane, spike };

struct NetworkSpec {
  std::string name;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::size_t timesteps = 4;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> fsta_placement;  // stage indices that carry an FSTA layer
  ResidualMode residual = ResidualMode::membrane;
  LifParams neuron;

  // Output extent of the final classifier; 0 if there is none.
  std::size_t classes() const;
  // Indices into `layers` of the spiking stages (conv_bn_lif, residual_block).
  std::vector<std::size_t> stage_layers() const;

  bool operator==(const NetworkSpec&) const;
};

// stem conv 16, conv 32 stride 2, two residual blocks at 32, global pool, classifier.
NetworkSpec snn_tiny(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t classes,
                     std::size_t timesteps);
// CIFAR-style ResNet-20 layout: stem 64, three stages of three blocks at
// 64/128/256 channels. Widths are an assumption, not a reconstruction.
NetworkSpec resnet20_snn(std::size_t in_channels, std::size_t height, std::size_t width, std::size_t classes,
                         std::size_t timesteps);
NetworkSpec catalog_network(std::string_view name, std::size_t in_channels, std::size_t height, std::size_t width,
                            std::size_t classes, std::size_t timesteps);

// Stages where FSTA goes when the caller does not say: after every residual stage.
std::vector<std::size_t> default_fsta_placement(const NetworkSpec& spec);

// Returns a copy of `spec` with an FSTA layer after each named stage.
NetworkSpec insert_fsta(const NetworkSpec& spec, std::span<const std::size_t> placement, const FstaConfig& config);

struct BatchNormState {
  Parameter scale;
  Parameter shift;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0, const std::string& prefix = "bn");
  std::size_t channels() const { return running_mean.size(); }
};

// x is [B,C,H,W]. Training normalizes with batch statistics over (B,H,W) and
// updates the running statistics; inference uses the running statistics.
Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training);

struct ConvUnit {
  Parameter weight;  // [Cout,Cin,k,k]
  BatchNormState bn;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t kernel() const { return weight.value.dim(2); }
};

struct Layer {
  LayerSpec spec;
  std::string name;
  Shape in_shape;   // per sample, per timestep
  Shape out_shape;
  std::optional<ConvUnit> conv1;
  std::optional<ConvUnit> conv2;
  std::optional<ConvUnit> shortcut;
  std::optional<FstaModule> attention;
  std::optional<Parameter> fc_w;
  std::optional<Parameter> fc_b;
};

// One spiking population observed during a traced forward pass.
struct SpikeRecord {
  std::string name;
  std::size_t layer = 0;  // index into Network::layers()
  Tensor spikes;          // [T,N,C,H,W], binary
};

struct ForwardTrace {
  std::size_t timesteps = 0;
  std::size_t batch = 0;
  std::vector<SpikeRecord> spikes;
  std::vector<std::pair<std::string, AttentionTrace>> attention;
  Tensor logits;  // [T,N,classes]

  const SpikeRecord* find(std::string_view name) const;
};

struct ForwardResult {
  Tensor logits;  // [T,N,classes]
  std::optional<ForwardTrace> trace;
};

class Network {
 public:
  // Validates the spec's shape arithmetic and initializes parameters from
  // `seed` (He-normal convolutions, fan-in uniform classifier).
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  ForwardResult forward(const Tensor& input, bool training, bool trace = false);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  ParameterList parameters();
  std::vector<BatchNormState*> batch_norms();
  std::size_t parameter_count() const;         // trainable
  std::size_t frozen_parameter_count() const;  // fixed DCT kernels

 private:
  Network() = default;
  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

}  // namespace fsta
