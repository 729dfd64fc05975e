#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsta/tensor.hpp"

namespace fsta {

struct Dataset {
  Tensor images;  // [S,C,H,W]
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  // Samples at `indices`, in that order.
  Dataset gather(std::span<const std::size_t> indices) const;
};

// ---- tensor container -------------------------------------------------------
//
// "FSTA" | version u8 | dtype u8 | rank u8 | rank x u32 extents | payload,
// all little-endian. dtype 0 = f32, 1 = f64, 2 = u8 (spike trains use 0/1).

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline constexpr std::uint8_t kContainerVersion = 1;

std::size_t container_header_size(std::size_t rank);
std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype = nullptr);
void save_tensor_container(const std::filesystem::path& path, const Tensor& t, DType dtype);
Tensor load_tensor_container(const std::filesystem::path& path, DType* dtype = nullptr);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// ---- CIFAR-10 binary batches ------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;
inline constexpr std::size_t kCifarBatchBytes = kCifarRecordBytes * kCifarRecordsPerBatch;

enum class Split { train, test };

// One batch file: label byte then 3072 pixel bytes (R, G, B planes of 32x32).
// Pixels are scaled to [0,1]; no normalization.
Dataset decode_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& source = "batch");
// data_batch_1..5.bin for the train split, test_batch.bin for test.
Dataset load_cifar10_binary(const std::filesystem::path& dir, Split split);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats channel_stats(const Dataset& data);
Dataset normalize(const Dataset& data, const ChannelStats& stats);

// Horizontal flip with probability 1/2 and a random crop after zero padding by `pad`.
Dataset augment_flip_crop(const Dataset& data, std::size_t pad, std::uint64_t seed);

// ---- synthetic sets ---------------------------------------------------------

enum class Orientation { vertical, horizontal };

struct GratingParams {
  std::size_t samples = 256;
  std::size_t height = 16;
  std::size_t width = 16;
  double period = 4.0;
  double orientation_mix = 0.5;  // probability of a horizontal grating
  double noise = 0.0;
  std::uint64_t seed = 0;
};

// Single-channel sinusoidal stripes with random phase. Vertical stripes vary
// along the columns (label 0); horizontal stripes vary along the rows (label 1).
Dataset synthetic_gratings(const GratingParams& params);
Tensor grating_image(std::size_t height, std::size_t width, double period, Orientation orientation, double phase);

struct TwoClassParams {
  std::size_t samples = 512;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t blobs = 6;
  double fine_sigma = 0.8;
  double coarse_sigma = 2.2;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

// Textures of Gaussian blobs: label 0 uses narrow blobs, label 1 wide ones.
// Labels alternate so every prefix is balanced.
Dataset synthetic_twoclass(const TwoClassParams& params);

}  // namespace fsta
