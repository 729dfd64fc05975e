#include "fsta/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fsta {

namespace {

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Strides of `operand` aligned to `out`, zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& operand, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto own = contiguous_strides(operand);
  const std::size_t offset = out.size() - operand.size();
  for (std::size_t i = 0; i < operand.size(); ++i) {
    if (operand[i] != 1 || out[offset + i] == 1) s[offset + i] = own[i];
  }
  return s;
}

// Calls f(out_index, a_index, b_index) in row-major order of `out`.
template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1];
  const std::size_t ib = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class BinaryKind { add, sub, mul };

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = aligned_strides(a.shape(), out_shape);
  const auto sb = aligned_strides(b.shape(), out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(numel(out_shape));
  const bool same = a.shape() == b.shape();

  switch (kind) {
    case BinaryKind::add:
      if (same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      } else {
        broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
      }
      break;
    case BinaryKind::sub:
      broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; });
      break;
    case BinaryKind::mul:
      broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
      break;
  }

  static constexpr std::string_view names[] = {"add", "sub", "mul"};
  std::vector<double> a_saved, b_saved;
  if (kind == BinaryKind::mul && grad_enabled()) {
    if (b.requires_grad()) a_saved.assign(av.begin(), av.end());
    if (a.requires_grad()) b_saved.assign(bv.begin(), bv.end());
  }
  return Tensor::from_op(
      out_shape, std::move(out), names[static_cast<int>(kind)], {a, b},
      [kind, out_shape, sa, sb, a_saved = std::move(a_saved), b_saved = std::move(b_saved)](
          std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
        auto* ga = gin[0];
        auto* gb = gin[1];
        switch (kind) {
          case BinaryKind::add:
          case BinaryKind::sub: {
            const double sign = kind == BinaryKind::add ? 1.0 : -1.0;
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              if (ga) (*ga)[i] += g[o];
              if (gb) (*gb)[j] += sign * g[o];
            });
            break;
          }
          case BinaryKind::mul:
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              if (ga) (*ga)[i] += g[o] * b_saved[j];
              if (gb) (*gb)[j] += g[o] * a_saved[i];
            });
            break;
        }
      });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("broadcast: shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
    }
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::mul, a, b); }

Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= s;
  return Tensor::from_op(a.shape(), std::move(out), "scalar_mul", {a},
                         [s](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& ga = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                         });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x += s;
  return Tensor::from_op(a.shape(), std::move(out), "add_scalar", {a},
                         [](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& ga = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
  std::vector<double> saved = grad_enabled() && a.requires_grad() ? out : std::vector<double>{};
  return Tensor::from_op(a.shape(), std::move(out), "sigmoid", {a},
                         [y = std::move(saved)](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& ga = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                         });
}

Tensor reduce(ReduceKind kind, const Tensor& x, std::span<const std::size_t> axes, bool keep_dims) {
  const Shape& in_shape = x.shape();
  std::vector<bool> reduced(in_shape.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in_shape.size()) {
      throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for shape " + to_string(in_shape));
    }
    reduced[ax] = true;
  }
  Shape kept(in_shape.size());
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < in_shape.size(); ++i) {
    kept[i] = reduced[i] ? 1 : in_shape[i];
    if (reduced[i]) count *= in_shape[i];
    if (!reduced[i] || keep_dims) out_shape.push_back(kept[i]);
  }

  const auto sx = contiguous_strides(in_shape);
  const auto so = aligned_strides(kept, in_shape);
  const auto xv = x.values();
  std::vector<double> out(numel(kept), kind == ReduceKind::max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::vector<std::size_t> argmax;
  if (kind == ReduceKind::max) argmax.assign(out.size(), 0);

  broadcast_loop(in_shape, sx, so, [&](std::size_t, std::size_t i, std::size_t o) {
    if (kind == ReduceKind::max) {
      if (xv[i] > out[o]) {
        out[o] = xv[i];
        argmax[o] = i;
      }
    } else {
      out[o] += xv[i];
    }
  });
  if (kind == ReduceKind::mean) {
    for (auto& v : out) v /= static_cast<double>(count);
  }

  static constexpr std::string_view names[] = {"reduce_sum", "reduce_mean", "reduce_max"};
  return Tensor::from_op(
      out_shape, std::move(out), names[static_cast<int>(kind)], {x},
      [kind, in_shape, sx, so, count, argmax = std::move(argmax)](std::span<const double> g,
                                                                  std::span<detail::GradBuffer* const> gin) {
        auto& gx = *gin[0];
        if (kind == ReduceKind::max) {
          for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
          return;
        }
        const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
        broadcast_loop(in_shape, sx, so, [&](std::size_t, std::size_t i, std::size_t o) { gx[i] += scale * g[o]; });
      });
}

Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims) {
  return reduce(ReduceKind::sum, x, axes, keep_dims);
}
Tensor mean(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims) {
  return reduce(ReduceKind::mean, x, axes, keep_dims);
}
Tensor max(const Tensor& x, std::vector<std::size_t> axes, bool keep_dims) {
  return reduce(ReduceKind::max, x, axes, keep_dims);
}

namespace {
std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return axes;
}
}  // namespace

Tensor sum_all(const Tensor& x) { return sum(x, all_axes(x)); }
Tensor mean_all(const Tensor& x) { return mean(x, all_axes(x)); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::from_op(std::move(shape), std::move(out), "reshape", {x},
                         [](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& gx = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

Tensor tile_leading(const Tensor& x, std::size_t times) {
  if (x.rank() == 0 || times == 0) throw ShapeError("tile_leading: needs rank >= 1 and times >= 1");
  Shape shape = x.shape();
  shape[0] *= times;
  const auto xv = x.values();
  std::vector<double> out;
  out.reserve(xv.size() * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), xv.begin(), xv.end());
  const std::size_t block = xv.size();
  return Tensor::from_op(std::move(shape), std::move(out), "tile_leading", {x},
                         [block, times](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& gx = *gin[0];
                           for (std::size_t t = 0; t < times; ++t)
                             for (std::size_t i = 0; i < block; ++i) gx[i] += g[t * block + i];
                         });
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t positions() const { return ho * wo; }
};

// col[(c*kh + i)*kw + j][oy*wo + ox] = input[c][oy*s + i - pad][ox*s + j - pad]
// Rows of `col` are `ld` apart so a whole batch can share one matrix.
void im2col(const ConvGeometry& g, const double* img, double* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wo;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * ld;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.w)) dst[x] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

// [patch, N*pos] for the whole batch.
std::vector<double> batch_im2col(const ConvGeometry& g, std::span<const double> x) {
  const std::size_t pos = g.positions();
  const std::size_t ld = g.n * pos;
  std::vector<double> col(g.patch() * ld);
  for (std::size_t n = 0; n < g.n; ++n) im2col(g, x.data() + n * g.cin * g.h * g.w, col.data() + n * pos, ld);
  return col;
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}


// Scatter formulation for mostly-zero inputs (spike maps): each nonzero input
// element touches only the outputs whose window covers it.
constexpr double kSparseDensity = 0.2;

struct NonZero {
  std::size_t n, c, y, x;
  double v;
};

std::vector<NonZero> nonzeros(const ConvGeometry& g, std::span<const double> x, std::size_t limit) {
  std::vector<NonZero> nz;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) continue;
    if (nz.size() >= limit) return {};
    const std::size_t xx = i % g.w, yy = (i / g.w) % g.h, c = (i / (g.w * g.h)) % g.cin, n = i / (g.w * g.h * g.cin);
    nz.push_back({n, c, yy, xx, x[i]});
  }
  return nz;
}

// Calls f(i, j, oy, ox) for every output position reached by input (y, x).
template <class F>
void for_each_reach(const ConvGeometry& g, std::size_t y, std::size_t x, F&& f) {
  for (std::size_t i = 0; i < g.kh; ++i) {
    const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(y + g.pad) - static_cast<std::ptrdiff_t>(i);
    if (ty < 0 || ty % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
    const std::size_t oy = static_cast<std::size_t>(ty) / g.stride;
    if (oy >= g.ho) continue;
    for (std::size_t j = 0; j < g.kw; ++j) {
      const std::ptrdiff_t tx = static_cast<std::ptrdiff_t>(x + g.pad) - static_cast<std::ptrdiff_t>(j);
      if (tx < 0 || tx % static_cast<std::ptrdiff_t>(g.stride) != 0) continue;
      const std::size_t ox = static_cast<std::size_t>(tx) / g.stride;
      if (ox >= g.wo) continue;
      f(i, j, oy, ox);
    }
  }
}

// kernel [cout, cin, kh, kw] -> [cin, kh, kw, cout]
std::vector<double> kernel_channels_last(const ConvGeometry& g, std::span<const double> w) {
  const std::size_t patch = g.patch();
  std::vector<double> t(patch * g.cout);
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t r = 0; r < patch; ++r) t[r * g.cout + o] = w[o * patch + r];
  return t;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected input [N,Cin,H,W] and kernel [Cout,Cin,kh,kw], got " +
                     to_string(input.shape()) + " and " + to_string(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels but kernel expects " +
                     std::to_string(kernel.dim(1)) + " (input " + to_string(input.shape()) + ", kernel " +
                     to_string(kernel.shape()) + ")");
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                 kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                     to_string(input.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t patch = g.patch();
  const std::size_t pos = g.positions();
  const std::size_t cols = g.n * pos;
  std::vector<double> out(g.n * g.cout * pos, 0.0);
  const auto xv = input.values();
  std::vector<NonZero> nz =
      cols > 0 ? nonzeros(g, xv, static_cast<std::size_t>(kSparseDensity * static_cast<double>(xv.size())))
               : std::vector<NonZero>{};
  const bool sparse = cols > 0 && (!nz.empty() || std::all_of(xv.begin(), xv.end(), [](double v) { return v == 0.0; }));
  if (sparse) {
    const std::vector<double> wt = kernel_channels_last(g, kernel.values());
    std::vector<double> acc(cols * g.cout, 0.0);  // [N, oy, ox, cout]
    for (const auto& e : nz) {
      for_each_reach(g, e.y, e.x, [&](std::size_t i, std::size_t j, std::size_t oy, std::size_t ox) {
        const double* wr = wt.data() + ((e.c * g.kh + i) * g.kw + j) * g.cout;
        double* dst = acc.data() + ((e.n * g.ho + oy) * g.wo + ox) * g.cout;
        for (std::size_t o = 0; o < g.cout; ++o) dst[o] += e.v * wr[o];
      });
    }
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t p = 0; p < pos; ++p)
        for (std::size_t o = 0; o < g.cout; ++o) out[(n * g.cout + o) * pos + p] = acc[(n * pos + p) * g.cout + o];
  } else if (cols > 0 && g.cout > 0) {
    const std::vector<double> col = batch_im2col(g, xv);
    std::vector<double> tmp(g.cout * cols);  // [cout, N*pos]
    gemm(false, false, g.cout, cols, patch, kernel.values().data(), patch, col.data(), cols, 0.0, tmp.data(), cols);
    for (std::size_t o = 0; o < g.cout; ++o)
      for (std::size_t n = 0; n < g.n; ++n)
        std::copy_n(tmp.data() + o * cols + n * pos, pos, out.data() + (n * g.cout + o) * pos);
  }

  return Tensor::from_op(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), "conv2d", {input, kernel},
      [g, input, kernel, sparse, nz = std::move(nz)](std::span<const double> grad,
                                                      std::span<detail::GradBuffer* const> gin) {
        auto* gx = gin[0];
        auto* gw = gin[1];
        const std::size_t patch = g.patch();
        const std::size_t pos = g.positions();
        const std::size_t cols = g.n * pos;
        if (cols == 0 || g.cout == 0) return;
        std::vector<double> gt(g.cout * cols);  // grad as [cout, N*pos]
        for (std::size_t o = 0; o < g.cout; ++o)
          for (std::size_t n = 0; n < g.n; ++n)
            std::copy_n(grad.data() + (n * g.cout + o) * pos, pos, gt.data() + o * cols + n * pos);
        if (gw && sparse) {
          std::vector<double> gwt(patch * g.cout, 0.0);  // [cin, kh, kw, cout]
          std::vector<double> gl(cols * g.cout);         // grad as [N, oy, ox, cout]
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t o = 0; o < g.cout; ++o)
              for (std::size_t p = 0; p < pos; ++p) gl[(n * pos + p) * g.cout + o] = grad[(n * g.cout + o) * pos + p];
          for (const auto& e : nz) {
            for_each_reach(g, e.y, e.x, [&](std::size_t i, std::size_t j, std::size_t oy, std::size_t ox) {
              double* dst = gwt.data() + ((e.c * g.kh + i) * g.kw + j) * g.cout;
              const double* src = gl.data() + ((e.n * g.ho + oy) * g.wo + ox) * g.cout;
              for (std::size_t o = 0; o < g.cout; ++o) dst[o] += e.v * src[o];
            });
          }
          for (std::size_t o = 0; o < g.cout; ++o)
            for (std::size_t r = 0; r < patch; ++r) (*gw)[o * patch + r] += gwt[r * g.cout + o];
        } else if (gw) {
          const std::vector<double> col = batch_im2col(g, input.values());
          gemm(false, true, g.cout, patch, cols, gt.data(), cols, col.data(), cols, 1.0, gw->data(), patch);
        }
        if (gx) {
          std::vector<double> gcol(patch * cols);
          gemm(true, false, patch, cols, g.cout, kernel.values().data(), patch, gt.data(), cols, 0.0, gcol.data(),
               cols);
          for (std::size_t n = 0; n < g.n; ++n)
            col2im_add(g, gcol.data() + n * pos, gx->data() + n * g.cin * g.h * g.w, cols);
        }
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear: expected weight [Dout,Din] and bias [Dout], got " + to_string(weight.shape()) +
                     " and " + to_string(bias.shape()));
  }
  if (input.rank() == 0 || input.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(input.shape()) + " does not end in Din = " +
                     std::to_string(weight.dim(1)));
  }
  const std::size_t din = weight.dim(1);
  const std::size_t dout = weight.dim(0);
  const std::size_t rows = input.numel() / din;
  const auto xv = input.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  std::vector<double> out(rows * dout);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = xv.data() + r * din;
    for (std::size_t o = 0; o < dout; ++o) {
      const double* w = wv.data() + o * din;
      double acc = bv[o];
      for (std::size_t i = 0; i < din; ++i) acc += w[i] * x[i];
      out[r * dout + o] = acc;
    }
  }
  Shape shape = input.shape();
  shape.back() = dout;
  return Tensor::from_op(
      std::move(shape), std::move(out), "linear", {input, weight, bias},
      [rows, din, dout, input, weight](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
        const auto xv = input.values();
        const auto wv = weight.values();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * dout;
          for (std::size_t o = 0; o < dout; ++o) {
            const double go = gr[o];
            if (gin[0]) {
              double* gx = gin[0]->data() + r * din;
              const double* w = wv.data() + o * din;
              for (std::size_t i = 0; i < din; ++i) gx[i] += go * w[i];
            }
            if (gin[1]) {
              double* gw = gin[1]->data() + o * din;
              const double* x = xv.data() + r * din;
              for (std::size_t i = 0; i < din; ++i) gw[i] += go * x[i];
            }
            if (gin[2]) (*gin[2])[o] += go;
          }
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  return Tensor::from_op({m, n}, std::move(out), "matmul", {a, b},
                         [m, k, n, a, b](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           const auto av = a.values();
                           const auto bv = b.values();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t p = 0; p < k; ++p)
                               for (std::size_t j = 0; j < n; ++j) {
                                 const double gij = g[i * n + j];
                                 if (gin[0]) (*gin[0])[i * k + p] += gij * bv[p * n + j];
                                 if (gin[1]) (*gin[1])[p * n + j] += gij * av[i * k + p];
                               }
                         });
}

Tensor avg_pool2d(const Tensor& input, std::size_t k) {
  if (input.rank() != 4) throw ShapeError("avg_pool2d: expected [N,C,H,W], got " + to_string(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (k == 0 || k > h || k > w) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " invalid for " + to_string(input.shape()));
  }
  const std::size_t ho = h / k, wo = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto xv = input.values();
  std::vector<double> out(n * c * ho * wo, 0.0);
  for (std::size_t m = 0; m < n * c; ++m)
    for (std::size_t y = 0; y < ho * k; ++y)
      for (std::size_t x = 0; x < wo * k; ++x) out[(m * ho + y / k) * wo + x / k] += inv * xv[(m * h + y) * w + x];
  return Tensor::from_op({n, c, ho, wo}, std::move(out), "avg_pool2d", {input},
                         [n, c, h, w, k, ho, wo, inv](std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& gx = *gin[0];
                           for (std::size_t m = 0; m < n * c; ++m)
                             for (std::size_t y = 0; y < ho * k; ++y)
                               for (std::size_t x = 0; x < wo * k; ++x)
                                 gx[(m * h + y) * w + x] += inv * g[(m * ho + y / k) * wo + x / k];
                         });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expected [N,K], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count does not match batch");
  const auto lv = logits.values();
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                              std::to_string(k) + ")");
    }
    const double* row = lv.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::from_op({}, {loss}, "softmax_cross_entropy", {logits},
                         [n, k, probs = std::move(probs), lab = std::move(lab)](
                             std::span<const double> g, std::span<detail::GradBuffer* const> gin) {
                           auto& gl = *gin[0];
                           const double scale = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < k; ++j) {
                               const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
                               gl[i * k + j] += scale * (probs[i * k + j] - target);
                             }
                         });
}

}  // namespace fsta
