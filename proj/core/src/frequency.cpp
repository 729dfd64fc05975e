#include "fsta/frequency.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fsta {

namespace {

// cos/sin of -2*pi*m/N for m in [0, N); indices are reduced mod N before lookup,
// which keeps large k*n products exact.
struct Twiddles {
  std::vector<double> c, s;
  explicit Twiddles(std::size_t n) : c(n), s(n) {
    for (std::size_t m = 0; m < n; ++m) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
      c[m] = std::cos(a);
      s[m] = -std::sin(a);
    }
  }
};

// out[k] = sum_n in[n] * exp(sign * j*2*pi*k*n/N), strided access.
void transform(const double* re, const double* im, std::size_t stride, std::size_t n, const Twiddles& tw,
               bool inverse, double* out_re, double* out_im, std::size_t out_stride) {
  for (std::size_t k = 0; k < n; ++k) {
    double ar = 0.0, ai = 0.0;
    std::size_t m = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double c = tw.c[m];
      const double s = inverse ? -tw.s[m] : tw.s[m];
      const double xr = re[t * stride];
      const double xi = im ? im[t * stride] : 0.0;
      ar += xr * c - xi * s;
      ai += xr * s + xi * c;
      m += k;
      if (m >= n) m -= n;
    }
    out_re[k * out_stride] = ar;
    out_im[k * out_stride] = ai;
  }
}

}  // namespace

ComplexBuffer::ComplexBuffer(Shape s) : shape(std::move(s)), re(numel(shape), 0.0), im(numel(shape), 0.0) {}

ComplexBuffer ComplexBuffer::from_real(Shape s, std::span<const double> values) {
  ComplexBuffer b(std::move(s));
  if (values.size() != b.size()) throw ShapeError("complex buffer: value count does not match shape");
  b.re.assign(values.begin(), values.end());
  return b;
}

ComplexBuffer dft1d(std::span<const double> x) { return dft1d(ComplexBuffer::from_real({x.size()}, x)); }

ComplexBuffer dft1d(const ComplexBuffer& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("dft1d: empty sequence");
  ComplexBuffer out({n});
  transform(x.re.data(), x.im.data(), 1, n, Twiddles(n), false, out.re.data(), out.im.data(), 1);
  return out;
}

ComplexBuffer idft1d(const ComplexBuffer& spectrum) {
  const std::size_t n = spectrum.size();
  if (n == 0) throw ShapeError("idft1d: empty sequence");
  ComplexBuffer out({n});
  transform(spectrum.re.data(), spectrum.im.data(), 1, n, Twiddles(n), true, out.re.data(), out.im.data(), 1);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.re[i] *= inv;
    out.im[i] *= inv;
  }
  return out;
}

ComplexBuffer dft2d(const Tensor& x) {
  if (x.rank() != 2 || x.numel() == 0) throw ShapeError("dft2d: expected a non-empty [M,N] map, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  ComplexBuffer tmp({rows, cols});
  const Twiddles tw_cols(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    transform(x.values().data() + r * cols, nullptr, 1, cols, tw_cols, false, tmp.re.data() + r * cols,
              tmp.im.data() + r * cols, 1);
  }
  ComplexBuffer out({rows, cols});
  const Twiddles tw_rows(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    transform(tmp.re.data() + c, tmp.im.data() + c, cols, rows, tw_rows, false, out.re.data() + c, out.im.data() + c,
              cols);
  }
  return out;
}

Tensor fftshift(const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("fftshift: expected [H,W], got " + to_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::vector<double> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) out[((u + h / 2) % h) * w + (v + w / 2) % w] = map[u * w + v];
  return Tensor(map.shape(), std::move(out));
}

Spectrum center_spectrum(const ComplexBuffer& raw) {
  if (raw.shape.size() != 2) throw ShapeError("center_spectrum: expected a 2D buffer");
  std::vector<double> mag(raw.size());
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(raw.re[i], raw.im[i]);
  return Spectrum{fftshift(Tensor(raw.shape, std::move(mag))), true};
}

Band Band::horizontal_axis(std::size_t halfwidth) {
  return Band(Kind::horizontal_axis, 0.0, static_cast<double>(halfwidth));
}

Band Band::vertical_axis(std::size_t halfwidth) { return Band(Kind::vertical_axis, 0.0, static_cast<double>(halfwidth)); }

Band Band::radial(double r_lo, double r_hi) {
  if (!(r_lo >= 0.0) || !(r_hi >= r_lo)) throw std::invalid_argument("band: radial band needs 0 <= r_lo <= r_hi");
  return Band(Kind::radial, r_lo, r_hi);
}

bool Band::contains(std::ptrdiff_t drow, std::ptrdiff_t dcol) const {
  switch (kind_) {
    case Kind::horizontal_axis:
      return static_cast<double>(std::abs(drow)) <= hi_;
    case Kind::vertical_axis:
      return static_cast<double>(std::abs(dcol)) <= hi_;
    case Kind::radial: {
      const double r = std::hypot(static_cast<double>(drow), static_cast<double>(dcol));
      return r >= lo_ && r <= hi_;
    }
  }
  return false;
}

double band_energy(const Spectrum& spectrum, const Band& band) {
  if (!spectrum.centered) throw std::invalid_argument("band_energy: spectrum must be centered");
  const Tensor& m = spectrum.magnitudes;
  const std::size_t h = m.dim(0), w = m.dim(1);
  if ((band.kind() == Band::Kind::horizontal_axis && band.hi() >= static_cast<double>(h)) ||
      (band.kind() == Band::Kind::vertical_axis && band.hi() >= static_cast<double>(w))) {
    throw std::invalid_argument("band_energy: halfwidth " + std::to_string(band.hi()) + " exceeds the " +
                                to_string(m.shape()) + " map");
  }
  const auto cr = static_cast<std::ptrdiff_t>(h / 2);
  const auto cc = static_cast<std::ptrdiff_t>(w / 2);
  double inside = 0.0, total = 0.0;
  std::size_t bins = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double e = m[r * w + c] * m[r * w + c];
      total += e;
      if (band.contains(static_cast<std::ptrdiff_t>(r) - cr, static_cast<std::ptrdiff_t>(c) - cc)) {
        inside += e;
        ++bins;
      }
    }
  if (bins == 0) throw std::invalid_argument("band_energy: band selects no frequency bin");
  return total > 0.0 ? inside / total : 0.0;
}

DctBasis dct_basis(std::size_t k) {
  if (k == 0) throw std::invalid_argument("dct_basis: kernel size must be positive");
  static std::mutex mu;
  static std::map<std::size_t, Tensor> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(k);
  if (it == cache.end()) {
    std::vector<double> w(k * k * k * k);
    const double kd = static_cast<double>(k);
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t v = 0; v < k; ++v)
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double a = std::cos(std::numbers::pi * static_cast<double>(u) * (static_cast<double>(i) + 0.5) / kd);
            const double b = std::cos(std::numbers::pi * static_cast<double>(v) * (static_cast<double>(j) + 0.5) / kd);
            w[((u * k + v) * k + i) * k + j] = a * b;
          }
    it = cache.emplace(k, Tensor({k * k, 1, k, k}, std::move(w))).first;
  }
  return DctBasis{k, it->second};
}

Tensor dct2d(const Tensor& x) {
  if (x.rank() != 2 || x.numel() == 0) throw ShapeError("dct2d: expected a non-empty [H,W] map, got " + to_string(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1);
  std::vector<double> ch(h * h), cw(w * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t i = 0; i < h; ++i)
      ch[u * h + i] = std::cos(std::numbers::pi * static_cast<double>(u) * (static_cast<double>(i) + 0.5) / static_cast<double>(h));
  for (std::size_t v = 0; v < w; ++v)
    for (std::size_t j = 0; j < w; ++j)
      cw[v * w + j] = std::cos(std::numbers::pi * static_cast<double>(v) * (static_cast<double>(j) + 0.5) / static_cast<double>(w));
  std::vector<double> f(h * w, 0.0);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) acc += x[i * w + j] * ch[u * h + i] * cw[v * w + j];
      f[u * w + v] = acc;
    }
  return Tensor(x.shape(), std::move(f));
}

}  // namespace fsta
