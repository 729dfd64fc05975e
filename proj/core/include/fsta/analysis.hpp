#pragma once

// Firing statistics, operation counting, the energy model, and spectrum
// reports over traced spiking layers.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsta/model.hpp"
#include "fsta/tensor.hpp"

namespace fsta {

struct LayerFiring {
  std::string name;
  std::uint64_t spikes = 0;
  std::uint64_t slots = 0;  // neurons x T x batch
  double rate = 0.0;
};

struct FiringStats {
  std::vector<LayerFiring> layers;
  std::uint64_t total_spikes = 0;
  std::uint64_t total_slots = 0;
  double network_rate = 0.0;
};

// Exact integer counting; throws std::domain_error on a value other than 0 or 1.
FiringStats firing_rate(const ForwardTrace& trace);
FiringStats firing_rate(std::span<const SpikeRecord> records);
// Sums counts of two stats over the same layers (e.g. successive batches).
void accumulate(FiringStats& into, const FiringStats& more);

struct OpCounts {
  double acs = 0.0;
  double macs = 0.0;
  std::size_t params = 0;         // trainable
  std::size_t frozen_params = 0;  // fixed DCT kernels
};

// Per-sample counts summed over all timesteps. Spikes are charged to the
// fanout of the layer that consumes them; real-valued arithmetic is MACs.
OpCounts count_ops(const Network& net, const ForwardTrace& trace);

// Number of (output position, filter) pairs reached by the spikes of a
// [..., C, H, W] binary tensor through a k x k window.
double conv_spike_acs(const Tensor& spikes, std::size_t kernel, std::size_t stride, std::size_t padding,
                      std::size_t out_channels);
double conv_macs(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t out_h,
                 std::size_t out_w);
// Multiplies and accumulates inside one FSTA block for one sample, all timesteps.
double fsta_macs(std::size_t timesteps, std::size_t channels, std::size_t height, std::size_t width,
                 std::size_t kernel);

struct EnergyModel {
  double e_ac = 0.9e-12;   // J per accumulate
  double e_mac = 4.6e-12;  // J per multiply-accumulate

  void validate() const;
};

// Joules.
double energy(const OpCounts& counts, const EnergyModel& model = {});

inline constexpr std::array<std::size_t, 3> kBandHalfwidths{0, 1, 2};

struct SpectrumEntry {
  std::string layer;
  std::size_t layer_index = 0;  // position among the traced spiking layers
  std::size_t timestep = 0;
  Tensor probability;           // [H,W], in [0,1]
  Tensor magnitude;             // centered
  Tensor log_magnitude;         // log(1 + magnitude)
  std::array<double, 3> horizontal{};  // horizontal_axis band fractions per halfwidth
  std::array<double, 3> vertical{};
};

struct SpectrumReport {
  std::string architecture;
  std::string dataset;
  std::size_t timesteps = 0;
  std::vector<SpectrumEntry> entries;  // layer-major, then timestep
};

// Spectrum of one firing-probability map [H,W].
SpectrumEntry analyze_map(const Tensor& probability);
// Averages every spiking record over the batch and channel axes (and over all
// traces), then analyzes each (layer, timestep) map.
SpectrumReport spectrum_report(std::span<const ForwardTrace> traces);

struct Reduction {
  std::string name;
  double base = 0.0;
  double fsta = 0.0;
  std::optional<double> reduction;  // (base - fsta) / base; empty when base is 0
};

struct ReductionReport {
  std::vector<Reduction> layers;
  Reduction network;
};

ReductionReport compare_runs(const FiringStats& base, const FiringStats& fsta);

// ---- report files -----------------------------------------------------------

void write_matrix_csv(const std::filesystem::path& path, const Tensor& map);
// Binary P5, maxval 255, linear map after dividing by the map's maximum.
void write_pgm(const std::filesystem::path& path, const Tensor& map);
void write_firing_csv(const std::filesystem::path& path, const FiringStats& stats);
FiringStats read_firing_csv(const std::filesystem::path& path);
void write_energy_csv(const std::filesystem::path& path, const OpCounts& counts, const EnergyModel& model);
void write_reduction_csv(const std::filesystem::path& path, const ReductionReport& report);
// <dir>/layer<L>_t<T>.{csv,pgm} (linear magnitude), <dir>/layer<L>_t<T>_log.csv,
// <dir>/bands.csv. Returns the files written.
std::vector<std::filesystem::path> write_spectrum_report(const std::filesystem::path& dir,
                                                         const SpectrumReport& report);

std::string format_mj(double joules);

}  // namespace fsta
