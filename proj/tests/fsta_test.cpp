#include <gtest/gtest.h>

#include "fsta/attention.hpp"
#include "fsta/ops.hpp"
#include "fsta/train.hpp"
#include "oracles.hpp"

using namespace fsta;

namespace {

void zero_compress(SpatialAttention& sa) {
  sa.compress_w.value = Tensor::zeros(sa.compress_w.value.shape(), true);
  sa.compress_b.value = Tensor::zeros({1}, true);
}

FstaConfig small(FusionMode mode = FusionMode::serial, std::size_t k = 3) {
  FstaConfig c;
  c.kernel_size = k;
  c.mode = mode;
  return c;
}

}  // namespace

TEST(SpatialAttention, ZeroInputStaysZero) {
  std::mt19937_64 rng(1);
  const SpatialAttention sa(7, rng);
  const Tensor y = sa_forward(sa, Tensor::zeros({2, 3, 5, 5}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialAttention, ZeroCompressGivesOnePointFive) {
  std::mt19937_64 rng(2);
  SpatialAttention sa(5, rng);
  zero_compress(sa);
  const Tensor x = oracle::random_tensor({2, 3, 4, 6}, rng);
  EXPECT_LE(oracle::max_abs_diff(sa_forward(sa, x), scalar_mul(x, 1.5)), 1e-15);
}

TEST(SpatialAttention, BinaryInputRange) {
  std::mt19937_64 rng(3);
  const SpatialAttention sa(3, rng);
  const Tensor x = oracle::random_binary({3, 4, 6, 6}, rng);
  const Tensor y = sa_forward(sa, x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x[i] == 0.0) {
      EXPECT_EQ(y[i], 0.0);
    } else {
      EXPECT_GT(y[i], 1.0);
      EXPECT_LT(y[i], 2.0);
    }
  }
}

TEST(SpatialAttention, MatchesHandComposition) {
  // mean over T, depthwise DCT conv averaged over C, 1x1 compress, sigmoid.
  std::mt19937_64 rng(4);
  const SpatialAttention sa(3, rng);
  const std::size_t T = 2, C = 3, H = 5, W = 4;
  const Tensor x = oracle::random_tensor({T, C, H, W}, rng);
  const Tensor xm = reshape(mean(x, {0}), {C, 1, H, W});
  const Tensor freq = mean(oracle::conv2d(xm, sa.dct().weights, 1, 1), {0});  // [9,H,W]
  std::vector<double> w(H * W);
  for (std::size_t p = 0; p < H * W; ++p) {
    double z = sa.compress_b.value[0];
    for (std::size_t c = 0; c < 9; ++c) z += sa.compress_w.value[c] * freq[c * H * W + p];
    w[p] = 1.0 / (1.0 + std::exp(-z));
  }
  const Tensor want = add(x, mul(x, Tensor({H, W}, w)));
  EXPECT_LE(oracle::max_abs_diff(sa_forward(sa, x), want), 1e-12);
}

TEST(SpatialAttention, RankError) {
  std::mt19937_64 rng(5);
  const SpatialAttention sa(3, rng);
  EXPECT_THROW(sa_forward(sa, Tensor::zeros({3, 4, 4})), ShapeError);
}

TEST(TemporalAttention, ZeroInput) {
  std::mt19937_64 rng(6);
  const TemporalAttention ta(4, 0.5, 0.5, rng);
  AttentionTrace tr;
  const Tensor y = ta.forward(Tensor::zeros({4, 2, 3, 3}), &tr);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  for (double v : tr.t_w.values()) EXPECT_EQ(v, 0.5);
}

TEST(TemporalAttention, SingleStepIdentityMap) {
  std::mt19937_64 rng(7);
  TemporalAttention ta(1, 0.0, 0.0, rng);
  ta.map_w.value = Tensor::ones({1, 1}, true);
  ta.map_b.value = Tensor::zeros({1}, true);
  const Tensor x = oracle::random_tensor({1, 3, 4, 4}, rng);
  EXPECT_LE(oracle::max_abs_diff(ta_forward(ta, x), scalar_mul(x, 1.5)), 1e-15);
}

TEST(TemporalAttention, MatchesHandComposition) {
  std::mt19937_64 rng(8);
  const TemporalAttention ta(3, 0.3, 0.8, rng);
  const std::size_t T = 3, C = 2, HW = 6;
  const Tensor x = oracle::random_tensor({T, C, 2, 3}, rng);
  std::vector<double> mm(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0, m = -1e300;
      for (std::size_t p = 0; p < HW; ++p) {
        s += x[(t * C + c) * HW + p];
        m = std::max(m, x[(t * C + c) * HW + p]);
      }
      mm[t] += (0.3 * s / HW + 0.8 * m) / C;
    }
  }
  const Tensor tw = sigmoid(oracle::linear(Tensor({T}, mm), ta.map_w.value, ta.map_b.value));
  const Tensor want = add(x, mul(x, reshape(tw, {T, 1, 1, 1})));
  EXPECT_LE(oracle::max_abs_diff(ta_forward(ta, x), want), 1e-12);
}

TEST(TemporalAttention, TimestepMismatch) {
  std::mt19937_64 rng(9);
  const TemporalAttention ta(4, 0.5, 0.5, rng);
  EXPECT_THROW(ta_forward(ta, Tensor::zeros({3, 2, 3, 3})), ShapeError);
}

TEST(Fsta, BranchProjection) {
  std::mt19937_64 rng(10);
  FstaModule m(3, small(), rng);
  m.scale_t.value = Tensor({1}, {1.0}, true);
  m.scale_s.value = Tensor({1}, {0.0}, true);
  const Tensor x = oracle::random_binary({3, 2, 5, 5}, rng);
  EXPECT_LE(oracle::max_abs_diff(fsta_forward(m, x), ta_forward(m.ta, x)), 1e-15);
}

TEST(Fsta, ParallelSpatialOnly) {
  std::mt19937_64 rng(11);
  FstaModule m(3, small(FusionMode::parallel), rng);
  m.scale_t.value = Tensor({1}, {0.0}, true);
  m.scale_s.value = Tensor({1}, {0.7}, true);
  const Tensor x = oracle::random_binary({3, 2, 5, 5}, rng);
  EXPECT_LE(oracle::max_abs_diff(fsta_forward(m, x), scalar_mul(sa_forward(m.sa, x), 0.7)), 1e-15);
}

TEST(Fsta, ZerosInBothModes) {
  std::mt19937_64 rng(12);
  for (auto mode : {FusionMode::serial, FusionMode::parallel}) {
    const FstaModule m(2, small(mode), rng);
    const Tensor y = fsta_forward(m, Tensor::zeros({2, 3, 4, 4}));
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Fsta, SerialAndParallelDiffer) {
  std::mt19937_64 a(13), b(13);
  const FstaModule s(4, small(FusionMode::serial), a);
  const FstaModule p(4, small(FusionMode::parallel), b);
  std::mt19937_64 rng(14);
  const Tensor x = oracle::random_binary({4, 3, 6, 6}, rng);
  EXPECT_GT(oracle::max_abs_diff(fsta_forward(s, x), fsta_forward(p, x)), 0.0);
}

TEST(Fsta, TraceCapturesMaps) {
  std::mt19937_64 rng(15);
  const FstaModule m(4, small(), rng);
  AttentionTrace tr;
  const Tensor x = oracle::random_binary({4, 2, 5, 6}, rng);
  fsta_forward(m, x, &tr);
  EXPECT_EQ(tr.freq_w.shape(), (Shape{5, 6}));
  EXPECT_EQ(tr.t_w.shape(), (Shape{4}));
  for (double v : tr.freq_w.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Fsta, BatchedEqualsPerSample) {
  std::mt19937_64 rng(16);
  const FstaModule m(3, small(), rng);
  const Tensor x = oracle::random_binary({3, 2, 2, 4, 4}, rng);
  const Tensor y = fsta_forward(m, x);
  ASSERT_EQ(y.shape(), x.shape());
  const std::size_t chw = 2 * 16;
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> one;
    for (std::size_t t = 0; t < 3; ++t)
      one.insert(one.end(), x.values().begin() + (t * 2 + n) * chw, x.values().begin() + (t * 2 + n + 1) * chw);
    const Tensor ys = fsta_forward(m, Tensor({3, 2, 4, 4}, one));
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < chw; ++i) EXPECT_NEAR(y[(t * 2 + n) * chw + i], ys[t * chw + i], 1e-14);
  }
}

TEST(Fsta, ParameterCount) {
  EXPECT_EQ(fsta_parameter_count(4, 7), 74u);
  EXPECT_EQ(fsta_parameter_count(1, 1), 8u);
  std::mt19937_64 rng(17);
  FstaModule m(4, FstaConfig{}, rng);
  EXPECT_EQ(m.trainable_parameter_count(), 74u);
}

TEST(Fsta, FrozenScales) {
  std::mt19937_64 rng(18);
  FstaConfig c = small();
  c.learnable_scales = false;
  FstaModule m(2, c, rng);
  EXPECT_FALSE(m.scale_t.trainable);
  EXPECT_FALSE(m.scale_s.trainable);
}

TEST(Fsta, ConfigValidation) {
  FstaConfig c;
  c.kernel_size = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.kernel_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Fsta, DctKernelFrozenUnderOptimizer) {
  std::mt19937_64 rng(19);
  FstaModule m(3, small(), rng);
  const std::vector<double> before(m.sa.dct_weights.value.values().begin(), m.sa.dct_weights.value.values().end());
  const Tensor x = oracle::random_binary({3, 2, 5, 5}, rng);
  TrainConfig cfg;
  OptimizerState st;
  const auto params = m.parameters();
  for (int i = 0; i < 100; ++i) {
    const Gradients g = backward(sum_all(fsta_forward(m, x)));
    optimizer_step(params, g, st, cfg, 0.01);
  }
  const auto after = m.sa.dct_weights.value.values();
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(after[i], before[i]);
}
