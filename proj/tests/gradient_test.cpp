// Analytic gradients against central differences (h = 1e-5).

#include <gtest/gtest.h>

#include "fsta/attention.hpp"
#include "fsta/model.hpp"
#include "fsta/neuron.hpp"
#include "fsta/ops.hpp"
#include "oracles.hpp"

using namespace fsta;

namespace {

constexpr double kTol = 1e-4;

Tensor leaf(Shape s, std::mt19937_64& rng) { return oracle::random_tensor(std::move(s), rng).detach(true); }

// Weighted sum so that the gradient is not the same in every position.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum_all(mul(y, oracle::random_tensor(y.shape(), rng, -1.0, 1.0)));
}

}  // namespace

TEST(Gradient, Conv2dBothArguments) {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    auto f = [&](const std::vector<Tensor>& a) { return project(conv2d(a[0], a[1], stride, 1), 1); };
    EXPECT_LE(oracle::gradient_error(f, {leaf({2, 2, 5, 5}, rng), leaf({3, 2, 3, 3}, rng)}), kTol);
  }
}

TEST(Gradient, Linear) {
  std::mt19937_64 rng(12);
  auto f = [](const std::vector<Tensor>& a) { return project(linear(a[0], a[1], a[2]), 2); };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 2, 4}, rng), leaf({5, 4}, rng), leaf({5}, rng)}), kTol);
}

TEST(Gradient, Matmul) {
  std::mt19937_64 rng(13);
  auto f = [](const std::vector<Tensor>& a) { return project(matmul(a[0], a[1]), 3); };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 4}, rng), leaf({4, 2}, rng)}), kTol);
}

TEST(Gradient, ElementwiseWithBroadcast) {
  std::mt19937_64 rng(14);
  auto f = [](const std::vector<Tensor>& a) {
    const Tensor y = add(mul(a[0], a[1]), sub(sigmoid(a[0]), scalar_mul(a[1], 0.3)));
    return project(add_scalar(y, 0.1), 4);
  };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 2, 4, 4}, rng), leaf({4, 4}, rng)}), kTol);
}

TEST(Gradient, Reductions) {
  std::mt19937_64 rng(15);
  for (auto kind : {ReduceKind::sum, ReduceKind::mean, ReduceKind::max}) {
    auto f = [kind](const std::vector<Tensor>& a) {
      const std::vector<std::size_t> axes{1, 3};
      return project(reduce(kind, a[0], axes), 5);
    };
    EXPECT_LE(oracle::gradient_error(f, {leaf({2, 3, 2, 4}, rng)}), kTol);
  }
}

TEST(Gradient, ReshapeTileAndPool) {
  std::mt19937_64 rng(16);
  auto f = [](const std::vector<Tensor>& a) {
    const Tensor t = tile_leading(a[0], 3);
    return project(reshape(avg_pool2d(t, 2), {6, 8}), 6);
  };
  EXPECT_LE(oracle::gradient_error(f, {leaf({2, 2, 4, 4}, rng)}), kTol);
}

TEST(Gradient, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(17);
  const std::vector<int> labels{0, 2, 1};
  auto f = [&](const std::vector<Tensor>& a) { return softmax_cross_entropy(a[0], labels); };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 4}, rng)}), kTol);
}

TEST(Gradient, BatchNormTraining) {
  std::mt19937_64 rng(18);
  auto f = [](const std::vector<Tensor>& a) {
    BatchNormState bn(3);
    bn.scale.value = a[1];
    bn.shift.value = a[2];
    return project(batch_norm(a[0], bn, true), 7);
  };
  EXPECT_LE(oracle::gradient_error(f, {leaf({4, 3, 3, 3}, rng), leaf({3}, rng), leaf({3}, rng)}), kTol);
}

TEST(Gradient, BatchNormInference) {
  std::mt19937_64 rng(19);
  auto f = [](const std::vector<Tensor>& a) {
    BatchNormState bn(2);
    bn.running_mean = {0.3, -0.2};
    bn.running_var = {1.5, 0.7};
    bn.scale.value = a[1];
    return project(batch_norm(a[0], bn, false), 8);
  };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 2, 2, 2}, rng), leaf({2}, rng)}), kTol);
}

TEST(Gradient, LifSmoothedSurrogates) {
  std::mt19937_64 rng(20);
  for (auto kind : {Surrogate::sigmoid, Surrogate::triangular}) {
    LifParams p;
    p.detach_reset = false;
    p.surrogate = kind;
    p.surrogate_width = kind == Surrogate::sigmoid ? 1.0 : 4.0;
    auto f = [&](const std::vector<Tensor>& a) {
      const LifState init{a[1]};
      return project(lif_sequence(a[0], p, init, FiringMode::smoothed), 9);
    };
    EXPECT_LE(oracle::gradient_error(f, {leaf({4, 2, 3}, rng), leaf({2, 3}, rng)}), kTol)
        << (kind == Surrogate::sigmoid ? "sigmoid" : "triangular");
  }
}

TEST(Gradient, SpatialAttention) {
  std::mt19937_64 rng(21);
  const SpatialAttention base(3, rng);
  auto f = [&](const std::vector<Tensor>& a) {
    SpatialAttention sa = base;
    sa.compress_w.value = a[1];
    sa.compress_b.value = a[2];
    return project(sa.forward(a[0]), 10);
  };
  EXPECT_LE(oracle::gradient_error(f, {leaf({3, 2, 5, 5}, rng), leaf({1, 9, 1, 1}, rng), leaf({1}, rng)}), kTol);
}

TEST(Gradient, TemporalAttention) {
  std::mt19937_64 rng(22);
  const TemporalAttention base(3, 0.5, 0.5, rng);
  auto f = [&](const std::vector<Tensor>& a) {
    TemporalAttention ta = base;
    ta.alpha.value = a[1];
    ta.beta.value = a[2];
    ta.map_w.value = a[3];
    ta.map_b.value = a[4];
    return project(ta.forward(a[0]), 11);
  };
  EXPECT_LE(oracle::gradient_error(
                f, {leaf({3, 2, 4, 4}, rng), leaf({1}, rng), leaf({1}, rng), leaf({3, 3}, rng), leaf({3}, rng)}),
            kTol);
}

TEST(Gradient, FusedFstaParameters) {
  std::mt19937_64 rng(23);
  for (auto mode : {FusionMode::serial, FusionMode::parallel}) {
    FstaConfig cfg;
    cfg.kernel_size = 3;
    cfg.mode = mode;
    const FstaModule base(3, cfg, rng);
    const Tensor x = oracle::random_binary({3, 2, 5, 5}, rng, 0.4);
    auto f = [&](const std::vector<Tensor>& a) {
      FstaModule m = base;
      m.ta.alpha.value = a[0];
      m.ta.beta.value = a[1];
      m.ta.map_w.value = a[2];
      m.sa.compress_w.value = a[3];
      m.scale_t.value = a[4];
      m.scale_s.value = a[5];
      return project(m.forward(x), 12);
    };
    EXPECT_LE(oracle::gradient_error(f, {leaf({1}, rng), leaf({1}, rng), leaf({3, 3}, rng), leaf({1, 9, 1, 1}, rng),
                                         leaf({1}, rng), leaf({1}, rng)}),
              kTol);
  }
}

TEST(Gradient, BatchedFstaInput) {
  std::mt19937_64 rng(24);
  FstaConfig cfg;
  cfg.kernel_size = 3;
  const FstaModule m(2, cfg, rng);
  auto f = [&](const std::vector<Tensor>& a) { return project(m.forward(a[0]), 13); };
  EXPECT_LE(oracle::gradient_error(f, {leaf({2, 3, 2, 4, 4}, rng)}), kTol);
}
