#pragma once

// Checkpoint container:
//   "FSCK" | u32 version | str config (YAML) | u64 epoch | str rng state
//   | u32 nparams  { str name | tensor container (f64) }
//   | u32 nbn      { str name | u32 C | C x f64 mean | C x f64 var }
//   | u64 optimizer step | u32 nslots { u64 n | n x f64 first | u64 m | m x f64 second }
// Strings are u32 length + bytes; everything little-endian.

#include <cstdint>
#include <filesystem>
#include <string>

#include "fsta/model.hpp"
#include "fsta/train.hpp"

namespace fsta::cli {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_yaml;
  std::size_t epoch = 0;
  std::string rng_state;
  OptimizerState optimizer;
};

void save_checkpoint(const std::filesystem::path& path, Network& net, const TrainState& state,
                     const std::string& config_yaml);
// Restores parameters and BN statistics into `net` (which must have the same
// layout) and returns the remaining fields.
Checkpoint load_checkpoint(const std::filesystem::path& path, Network* net);
// Reads only the embedded config.
std::string checkpoint_config(const std::filesystem::path& path);

void restore_train_state(const Checkpoint& ck, TrainState& state);

}  // namespace fsta::cli
