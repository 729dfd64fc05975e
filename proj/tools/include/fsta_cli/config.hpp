#pragma once

// Run configuration: one YAML document per run, parsed strictly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsta/attention.hpp"
#include "fsta/data.hpp"
#include "fsta/model.hpp"
#include "fsta/neuron.hpp"
#include "fsta/train.hpp"

namespace fsta::cli {

// Validation failure; `what()` carries "<source>:<line>: message" when the
// offending node has a position.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { cifar10_binary, tensor_container, synthetic_gratings, synthetic_twoclass };

using fsta::to_string;
std::string_view to_string(DatasetKind kind);

struct DatasetDescriptor {
  DatasetKind kind = DatasetKind::synthetic_twoclass;
  std::string path;  // cifar10_binary: directory holding the batch files
  // tensor_container: [S,C,H,W] images and [S] labels per split
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t classes = 0;  // tensor_container; 0 = 1 + max label
  std::size_t samples = 512;
  std::size_t test_samples = 256;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  double period = 4.0;
  double orientation_mix = 0.5;
  double noise = 0.05;
  std::size_t blobs = 6;
  double fine_sigma = 0.8;
  double coarse_sigma = 2.2;
  std::uint64_t seed = 0;
  std::vector<double> mean;  // empty: computed from the train split (CIFAR) or none
  std::vector<double> stddev;

  bool operator==(const DatasetDescriptor&) const = default;
};

struct NetworkSection {
  std::string arch = "snn-tiny";  // snn-tiny | resnet20-snn | custom
  std::size_t timesteps = 4;
  ResidualMode residual = ResidualMode::membrane;
  LifParams neuron;
  std::vector<LayerSpec> layers;  // custom only

  bool operator==(const NetworkSection&) const = default;
};

struct FstaSection {
  bool enabled = true;
  FstaConfig config;
  std::optional<std::vector<std::size_t>> placement;  // default: after each residual stage

  bool operator==(const FstaSection&) const = default;
};

struct EvalSection {
  std::string checkpoint;
  std::size_t batch_size = 64;
  bool operator==(const EvalSection&) const = default;
};

struct SpectrumSection {
  std::string checkpoint;           // empty: freshly initialized network
  std::vector<std::string> traces;  // spike-trace containers [T,N,C,H,W]; replaces inference
  std::size_t batches = 4;
  std::size_t batch_size = 64;
  bool operator==(const SpectrumSection&) const = default;
};

struct EnergySection {
  std::string checkpoint;
  std::optional<double> acs;  // both set: skip inference and use these counts
  std::optional<double> macs;
  double e_ac = 0.9e-12;
  double e_mac = 4.6e-12;
  std::size_t samples = 64;
  bool operator==(const EnergySection&) const = default;
};

struct CompareSection {
  std::string base;  // firing.csv of the baseline run
  std::string fsta;
  bool operator==(const CompareSection&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_id;  // empty: derived from command and seed
  std::string output;  // empty: <report root>/<run id>
  NetworkSection network;
  FstaSection fsta;
  TrainConfig train;  // seed and timesteps mirror the top level
  DatasetDescriptor dataset;
  EvalSection eval;
  SpectrumSection spectrum;
  EnergySection energy;
  CompareSection compare;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

// Checks that files referenced by `command` exist and its required fields are set.
void validate_for_command(const RunConfig& config, const std::string& command);

// Network spec for the config, with FSTA inserted when enabled.
NetworkSpec network_spec(const RunConfig& config, std::size_t in_channels, std::size_t height, std::size_t width,
                         std::size_t classes);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

DatasetSplit load_dataset(const DatasetDescriptor& desc);

}  // namespace fsta::cli
