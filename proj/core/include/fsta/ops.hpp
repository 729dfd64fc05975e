#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fsta/tensor.hpp"

namespace fsta {

// Elementwise arithmetic. Binary ops broadcast numpy-style: shapes are
// right-aligned and an axis matches when the extents are equal or one of them
// is 1 or absent.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);

Shape broadcast_shape(const Shape& a, const Shape& b);

enum class ReduceKind { sum, mean, max };

// Reduces over `axes` (duplicates ignored). An empty axis set is the
// identity. Max routes the gradient to the first maximal element.
Tensor reduce(ReduceKind kind, const Tensor& x, std::span<const std::size_t> axes,
              bool keep_dims = false);
Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims = false);
Tensor mean(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims = false);
Tensor max(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// [N, ...] -> [times * N, ...], block `t` is a copy of x.
Tensor tile_leading(const Tensor& x, std::size_t times);

// input [N,Cin,H,W], kernel [Cout,Cin,k,k] (square or rectangular) with zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
              std::size_t padding = 0);

// Affine map over the last axis: input [..., Din], weight [Dout, Din], bias [Dout].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// Non-overlapping k x k mean pooling over the last two axes of [N,C,H,W].
Tensor avg_pool2d(const Tensor& input, std::size_t k);

// Mean softmax cross-entropy of logits [N,K] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace fsta
