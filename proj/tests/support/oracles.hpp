#pragma once

// Slow, obviously-correct reference implementations used by the tests.

#include <complex>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "fsta/model.hpp"
#include "fsta/tensor.hpp"

namespace oracle {

using fsta::Shape;
using fsta::Tensor;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0);
Tensor random_binary(Shape shape, std::mt19937_64& rng, double p = 0.3);

// Seven nested loops, zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
// y[..., o] = b[o] + sum_i x[..., i] w[o, i]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& x);
std::vector<std::complex<double>> idft(const std::vector<std::complex<double>>& X);
// Direct double sum over [M,N], row-major result.
std::vector<std::complex<double>> dft2(const Tensor& x);
// Direct double sum with the cosine kernel over the whole map.
double dct2_coefficient(const Tensor& x, std::size_t u, std::size_t v);

double max_abs_diff(const Tensor& a, const Tensor& b);
// max |a-b| / max(max |b|, tiny)
double max_rel_diff(const Tensor& a, const Tensor& b);

// Central differences of a scalar function of several tensors against the
// reverse-mode gradients. Returns the worst norm-wise relative error over
// the inputs that require gradients.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;
double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5);

// Composite trapezoid rule on [a, b].
double trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t n);

// Trainable parameters implied by the spec's layer list: conv weights plus
// two BN vectors per conv, 1x1 shortcuts when shape changes, classifier
// weights and bias, FSTA modules.
std::size_t parameter_tally(const fsta::NetworkSpec& spec);

}  // namespace oracle
