#include "fsta/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace fsta {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'T', 'A'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::size_t dtype_width(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

}  // namespace

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
  const Shape& s = images.shape();
  const std::size_t per = numel(s) / s[0];
  std::vector<double> v;
  v.reserve(indices.size() * per);
  std::vector<int> lab;
  lab.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("dataset: sample index out of range");
    auto first = images.values().begin() + static_cast<std::ptrdiff_t>(i * per);
    v.insert(v.end(), first, first + static_cast<std::ptrdiff_t>(per));
    lab.push_back(labels[i]);
  }
  Shape shape = s;
  shape[0] = indices.size();
  return Dataset{Tensor(shape, std::move(v)), std::move(lab), classes};
}

std::size_t container_header_size(std::size_t rank) { return 4 + 1 + 1 + 1 + 4 * rank; }

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (t.rank() > 255) throw std::invalid_argument("tensor container: rank exceeds 255");
  std::vector<std::uint8_t> out;
  out.reserve(container_header_size(t.rank()) + t.numel() * dtype_width(dtype));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kContainerVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw std::invalid_argument("tensor container: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (double x : t.values()) {
    switch (dtype) {
      case DType::f32:
        put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        break;
      case DType::f64:
        put_le(out, std::bit_cast<std::uint64_t>(x));
        break;
      case DType::u8:
        if (!(x >= 0.0 && x <= 255.0) || x != std::floor(x)) {
          throw std::invalid_argument("tensor container: value " + std::to_string(x) + " is not representable as u8");
        }
        out.push_back(static_cast<std::uint8_t>(x));
        break;
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, DType* dtype_out) {
  if (bytes.size() < container_header_size(0) || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("tensor container: bad magic (expected \"FSTA\")");
  }
  const std::uint8_t version = bytes[4];
  if (version != kContainerVersion) {
    throw std::runtime_error("tensor container: unsupported version " + std::to_string(version));
  }
  const std::uint8_t code = bytes[5];
  if (code > 2) throw std::runtime_error("tensor container: unsupported dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t rank = bytes[6];
  const std::size_t header = container_header_size(rank);
  if (bytes.size() < header) throw std::runtime_error("tensor container: truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes.data() + 7 + 4 * i);
  const std::size_t n = numel(shape);
  const std::size_t expected = header + n * dtype_width(dtype);
  if (bytes.size() != expected) {
    throw std::runtime_error("tensor container: payload length mismatch (expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(bytes.size()) + ")");
  }
  std::vector<double> v(n);
  const std::uint8_t* p = bytes.data() + header;
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::f32: v[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)); break;
      case DType::f64: v[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i)); break;
      case DType::u8: v[i] = p[i]; break;
    }
  }
  if (dtype_out) *dtype_out = dtype;
  return Tensor(std::move(shape), std::move(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_tensor_container(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  write_file(path, encode_tensor(t, dtype));
}

Tensor load_tensor_container(const std::filesystem::path& path, DType* dtype) {
  return decode_tensor(read_file(path), dtype);
}

Dataset decode_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() != kCifarBatchBytes) {
    throw std::runtime_error("cifar10: " + source + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(kCifarBatchBytes) + " (" + std::to_string(kCifarRecordsPerBatch) +
                             " records of " + std::to_string(kCifarRecordBytes) + " bytes)");
  }
  constexpr std::size_t pixels = kCifarRecordBytes - 1;
  std::vector<double> v(kCifarRecordsPerBatch * pixels);
  std::vector<int> labels(kCifarRecordsPerBatch);
  for (std::size_t r = 0; r < kCifarRecordsPerBatch; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw std::runtime_error("cifar10: " + source + " record " + std::to_string(r) + " has label " +
                               std::to_string(rec[0]) + " outside [0,9]");
    }
    labels[r] = rec[0];
    for (std::size_t i = 0; i < pixels; ++i) v[r * pixels + i] = rec[1 + i] / 255.0;
  }
  return Dataset{Tensor({kCifarRecordsPerBatch, 3, 32, 32}, std::move(v)), std::move(labels), 10};
}

Dataset load_cifar10_binary(const std::filesystem::path& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  std::vector<double> v;
  std::vector<int> labels;
  for (const auto& f : files) {
    const auto path = dir / f;
    Dataset part = decode_cifar10_batch(read_file(path), path.string());
    v.insert(v.end(), part.images.values().begin(), part.images.values().end());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  const std::size_t n = labels.size();
  return Dataset{Tensor({n, 3, 32, 32}, std::move(v)), std::move(labels), 10};
}

ChannelStats channel_stats(const Dataset& data) {
  const Shape& s = data.images.shape();
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  ChannelStats st{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const auto v = data.images.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) st.mean[ch] += v[(i * c + ch) * hw + p];
  const double count = static_cast<double>(n * hw);
  for (auto& m : st.mean) m /= count;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = v[(i * c + ch) * hw + p] - st.mean[ch];
        st.stddev[ch] += d * d;
      }
  for (auto& sd : st.stddev) sd = std::sqrt(sd / count);
  return st;
}

Dataset normalize(const Dataset& data, const ChannelStats& stats) {
  const Shape& s = data.images.shape();
  const std::size_t c = s[1], hw = s[2] * s[3];
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw std::invalid_argument("normalize: expected " + std::to_string(c) + " channel constants");
  }
  std::vector<double> v(data.images.values().begin(), data.images.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t ch = (i / hw) % c;
    const double sd = stats.stddev[ch] > 0.0 ? stats.stddev[ch] : 1.0;
    v[i] = (v[i] - stats.mean[ch]) / sd;
  }
  return Dataset{Tensor(s, std::move(v)), data.labels, data.classes};
}

Dataset augment_flip_crop(const Dataset& data, std::size_t pad, std::uint64_t seed) {
  const Shape& s = data.images.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> shift(0, 2 * pad);
  std::bernoulli_distribution flip(0.5);
  const auto src = data.images.values();
  std::vector<double> v(src.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool f = flip(rng);
    const auto dy = static_cast<std::ptrdiff_t>(shift(rng)) - static_cast<std::ptrdiff_t>(pad);
    const auto dx = static_cast<std::ptrdiff_t>(shift(rng)) - static_cast<std::ptrdiff_t>(pad);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          if (f) sx = static_cast<std::ptrdiff_t>(w) - 1 - sx;
          v[((i * c + ch) * h + y) * w + x] = src[((i * c + ch) * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        }
  }
  return Dataset{Tensor(s, std::move(v)), data.labels, data.classes};
}

Tensor grating_image(std::size_t height, std::size_t width, double period, Orientation orientation, double phase) {
  std::vector<double> v(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double coord = orientation == Orientation::vertical ? static_cast<double>(x) : static_cast<double>(y);
      v[y * width + x] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * coord / period + phase);
    }
  return Tensor({height, width}, std::move(v));
}

Dataset synthetic_gratings(const GratingParams& p) {
  if (p.samples == 0 || p.height == 0 || p.width == 0 || !(p.period > 0.0)) {
    throw std::invalid_argument("synthetic_gratings: samples, extents and period must be positive");
  }
  std::mt19937_64 rng(p.seed);
  std::bernoulli_distribution horizontal(p.orientation_mix);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t hw = p.height * p.width;
  std::vector<double> v(p.samples * hw);
  std::vector<int> labels(p.samples);
  for (std::size_t i = 0; i < p.samples; ++i) {
    const auto o = horizontal(rng) ? Orientation::horizontal : Orientation::vertical;
    labels[i] = o == Orientation::vertical ? 0 : 1;
    const Tensor img = grating_image(p.height, p.width, p.period, o, phase(rng));
    for (std::size_t k = 0; k < hw; ++k) {
      double x = img[k];
      if (p.noise > 0.0) x = std::clamp(x + p.noise * noise(rng), 0.0, 1.0);
      v[i * hw + k] = x;
    }
  }
  return Dataset{Tensor({p.samples, 1, p.height, p.width}, std::move(v)), std::move(labels), 2};
}

Dataset synthetic_twoclass(const TwoClassParams& p) {
  if (p.samples == 0 || p.channels == 0 || p.height == 0 || p.width == 0 || p.blobs == 0) {
    throw std::invalid_argument("synthetic_twoclass: sizes must be positive");
  }
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> ypos(0.0, static_cast<double>(p.height));
  std::uniform_real_distribution<double> xpos(0.0, static_cast<double>(p.width));
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t hw = p.height * p.width;
  std::vector<double> v(p.samples * p.channels * hw);
  std::vector<int> labels(p.samples);
  for (std::size_t i = 0; i < p.samples; ++i) {
    const int label = static_cast<int>(i % 2);
    labels[i] = label;
    const double sigma = label == 0 ? p.fine_sigma : p.coarse_sigma;
    std::vector<double> cy(p.blobs), cx(p.blobs);
    for (std::size_t b = 0; b < p.blobs; ++b) {
      cy[b] = ypos(rng);
      cx[b] = xpos(rng);
    }
    for (std::size_t ch = 0; ch < p.channels; ++ch)
      for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x) {
          double acc = 0.0;
          for (std::size_t b = 0; b < p.blobs; ++b) {
            const double dy = static_cast<double>(y) - cy[b];
            const double dx = static_cast<double>(x) - cx[b];
            acc += std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          }
          double val = std::min(acc, 1.0);
          if (p.noise > 0.0) val = std::clamp(val + p.noise * noise(rng), 0.0, 1.0);
          v[(i * p.channels + ch) * hw + y * p.width + x] = val;
        }
  }
  return Dataset{Tensor({p.samples, p.channels, p.height, p.width}, std::move(v)), std::move(labels), 2};
}

}  // namespace fsta
