#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fsta/attention.hpp"

namespace oracle {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(fsta::numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_binary(Shape shape, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution d(p);
  std::vector<double> v(fsta::numel(shape));
  for (auto& x : v) x = d(rng) ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(v));
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const std::size_t n = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1, wo = (w + 2 * padding - kw) / stride + 1;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          double acc = 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long r = static_cast<long>(y * stride + i) - static_cast<long>(padding);
                const long s = static_cast<long>(x * stride + j) - static_cast<long>(padding);
                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) continue;
                acc += input.at({b, c, static_cast<std::size_t>(r), static_cast<std::size_t>(s)}) *
                       kernel.at({o, c, i, j});
              }
          out[((b * co + o) * ho + y) * wo + x] = acc;
        }
  return Tensor({n, co, ho, wo}, out);
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const std::size_t din = weight.dim(1), dout = weight.dim(0);
  const std::size_t rows = input.numel() / din;
  std::vector<double> out(rows * dout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < din; ++i) acc += input[r * din + i] * weight[o * din + i];
      out[r * dout + o] = acc;
    }
  Shape s = input.shape();
  s.back() = dout;
  return Tensor(s, out);
}

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < n; ++t)
      out[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
  return out;
}

std::vector<std::complex<double>> idft(const std::vector<std::complex<double>>& X) {
  const std::size_t n = X.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < n; ++k)
      out[t] += X[k] * std::polar(1.0, 2.0 * std::numbers::pi * double(k * t % n) / double(n));
    out[t] /= double(n);
  }
  return out;
}

std::vector<std::complex<double>> dft2(const Tensor& x) {
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<std::complex<double>> out(m * n);
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> acc;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double ph = double(u * i % m) / double(m) + double(v * j % n) / double(n);
          acc += x.at({i, j}) * std::polar(1.0, -2.0 * std::numbers::pi * ph);
        }
      out[u * n + v] = acc;
    }
  return out;
}

double dct2_coefficient(const Tensor& x, std::size_t u, std::size_t v) {
  const std::size_t h = x.dim(0), w = x.dim(1);
  double acc = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      acc += x.at({i, j}) * std::cos(std::numbers::pi * double(u) * (double(i) + 0.5) / double(h)) *
             std::cos(std::numbers::pi * double(v) * (double(j) + 0.5) / double(w));
  return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 0.0;
  for (double v : b.values()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / std::max(scale, 1e-300);
}

double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  const fsta::Gradients g = fsta::backward(f(inputs));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    std::vector<double> analytic(inputs[k].numel(), 0.0);
    if (g.has(inputs[k])) {
      auto v = g.values(inputs[k]);
      analytic.assign(v.begin(), v.end());
    }
    std::vector<double> numeric(inputs[k].numel());
    {
      fsta::NoGradGuard guard;
      for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
        auto probe = [&](double delta) {
          std::vector<double> v(inputs[k].values().begin(), inputs[k].values().end());
          v[i] += delta;
          std::vector<Tensor> args = inputs;
          args[k] = Tensor(inputs[k].shape(), std::move(v));
          return f(args).item();
        };
        numeric[i] = (probe(h) - probe(-h)) / (2.0 * h);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

double trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  const double step = (b - a) / double(n);
  double acc = 0.5 * (f(a) + f(b));
  for (std::size_t i = 1; i < n; ++i) acc += f(a + step * double(i));
  return acc * step;
}

std::size_t parameter_tally(const fsta::NetworkSpec& spec) {
  using fsta::LayerKind;
  auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return co * ci * k * k + 2 * co; };
  std::size_t c = spec.in_channels, total = 0, flat = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv_bn_lif:
        total += conv(c, l.channels, l.kernel);
        c = l.channels;
        break;
      case LayerKind::residual_block:
        total += conv(c, l.channels, 3) + conv(l.channels, l.channels, 3);
        if (l.stride != 1 || l.channels != c) total += conv(c, l.channels, 1);
        c = l.channels;
        break;
      case LayerKind::fsta:
        total += fsta::fsta_parameter_count(spec.timesteps, l.fsta.kernel_size);
        break;
      case LayerKind::avgpool:
      case LayerKind::flatten:
        flat = c;  // global pooling in every network the tests build
        break;
      case LayerKind::classifier:
        total += l.channels * flat + l.channels;
        break;
    }
  }
  return total;
}

}  // namespace oracle
