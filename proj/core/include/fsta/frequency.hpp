#pragma once

// Discrete Fourier and cosine transforms over small real maps.
//
// Conventions: the forward DFT is unnormalized, X[k] = sum_n x[n] e^{-j 2 pi k n / N},
// and the inverse carries the 1/N factor. The DCT is the unnormalized DCT-II,
// so the (0,0) coefficient is exactly sum(x) = GAP(x) * H * W.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "fsta/tensor.hpp"

namespace fsta {

struct ComplexBuffer {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexBuffer() = default;
  explicit ComplexBuffer(Shape s);
  static ComplexBuffer from_real(Shape s, std::span<const double> values);

  std::size_t size() const { return re.size(); }
  std::complex<double> operator[](std::size_t i) const { return {re[i], im[i]}; }
};

ComplexBuffer dft1d(std::span<const double> x);
ComplexBuffer dft1d(const ComplexBuffer& x);
ComplexBuffer idft1d(const ComplexBuffer& spectrum);

// x [M,N]; row transforms followed by column transforms.
ComplexBuffer dft2d(const Tensor& x);

// Magnitude map with the DC bin moved to (floor(H/2), floor(W/2)).
struct Spectrum {
  Tensor magnitudes;
  bool centered = false;
};

// Cyclic shift by (floor(H/2), floor(W/2)); the DC bin lands at the center.
Tensor fftshift(const Tensor& map);
Spectrum center_spectrum(const ComplexBuffer& raw);

class Band {
 public:
  enum class Kind { horizontal_axis, vertical_axis, radial };

  // Rows within `halfwidth` of the center row (the horizontal frequency axis).
  static Band horizontal_axis(std::size_t halfwidth);
  // Columns within `halfwidth` of the center column.
  static Band vertical_axis(std::size_t halfwidth);
  // Bins whose distance from the center lies in [r_lo, r_hi].
  static Band radial(double r_lo, double r_hi);

  Kind kind() const { return kind_; }
  bool contains(std::ptrdiff_t drow, std::ptrdiff_t dcol) const;
  double lo() const { return lo_; }
  double hi() const { return hi_; }

 private:
  Band(Kind kind, double lo, double hi) : kind_(kind), lo_(lo), hi_(hi) {}
  Kind kind_;
  double lo_;
  double hi_;
};

// Fraction of total squared magnitude inside `band`; 0 for an all-zero
// spectrum. Throws std::invalid_argument for an uncentered spectrum, a band
// reaching outside the map, or a band that selects no bin.
double band_energy(const Spectrum& spectrum, const Band& band);

// Fixed DCT-II basis as convolution weights [k*k, 1, k, k]; channel u*k+v
// holds cos(pi*u*(i+1/2)/k) * cos(pi*v*(j+1/2)/k).
struct DctBasis {
  std::size_t kernel_size = 0;
  Tensor weights;

  std::size_t channels() const { return kernel_size * kernel_size; }
};

// Cached per kernel size; the returned weights never require gradients.
DctBasis dct_basis(std::size_t k);

// f[u,v] = sum_{i,j} x[i,j] cos(pi*u*(i+1/2)/H) cos(pi*v*(j+1/2)/W) over the full map.
Tensor dct2d(const Tensor& x);

}  // namespace fsta
