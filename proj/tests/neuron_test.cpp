#include <gtest/gtest.h>

#include <cmath>

#include "fsta/neuron.hpp"
#include "fsta/ops.hpp"
#include "oracles.hpp"

using namespace fsta;

namespace {

LifStepResult step1(double h, double i) {
  return lif_step(LifState{Tensor::scalar(h)}, Tensor::scalar(i), LifParams{});
}

}  // namespace

TEST(LifStep, SpikeAndReset) {
  const auto r = step1(0.0, 3.0);
  EXPECT_EQ(r.potential.item(), 1.5);
  EXPECT_EQ(r.spikes.item(), 1.0);
  EXPECT_EQ(r.next.h.item(), 0.0);
}

TEST(LifStep, LeakWithoutInput) {
  const auto r = step1(0.8, 0.0);
  EXPECT_DOUBLE_EQ(r.potential.item(), 0.4);
  EXPECT_EQ(r.spikes.item(), 0.0);
  EXPECT_DOUBLE_EQ(r.next.h.item(), 0.4);
}

TEST(LifStep, RestingIsFixedPoint) {
  LifParams p;
  p.v_reset = -0.2;
  const auto r = lif_step(LifState::resting({3}, p), Tensor::zeros({3}), p);
  for (double v : r.potential.values()) EXPECT_EQ(v, -0.2);
  for (double s : r.spikes.values()) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(oracle::max_abs_diff(r.next.h, Tensor::full({3}, -0.2)), 0.0);
}

TEST(LifStep, ShapeMismatch) {
  EXPECT_THROW(lif_step(LifState{Tensor::zeros({2})}, Tensor::zeros({3}), LifParams{}), ShapeError);
}

TEST(LifParams, Validation) {
  LifParams p;
  p.tau = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.v_th = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.surrogate_width = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_NO_THROW(LifParams{}.validate());
}

TEST(Heaviside, ZeroFires) {
  EXPECT_EQ(heaviside(0.0), 1.0);
  EXPECT_EQ(heaviside(-0.1), 0.0);
  const Tensor y = heaviside(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
  EXPECT_EQ(y[2], 1.0);
}

TEST(Surrogate, TriangleApexAndSupport) {
  EXPECT_EQ(surrogate_grad(0.0, 1.0), 1.0);
  EXPECT_EQ(surrogate_grad(1.0, 1.0), 0.0);
  EXPECT_EQ(surrogate_grad(-1.5, 1.0), 0.0);
  EXPECT_EQ(surrogate_grad(2.0, 0.5), 0.0);
}

TEST(Surrogate, IntegratesToOne) {
  for (double w : {0.5, 1.0, 2.0}) {
    const double area = oracle::trapezoid([w](double x) { return surrogate_grad(x, w); }, -w, w, 20000);
    EXPECT_NEAR(area, 1.0, 1e-6) << w;
  }
}

TEST(Surrogate, PrimitiveIsAntiderivative) {
  for (auto kind : {Surrogate::triangular, Surrogate::sigmoid}) {
    for (double x : {-0.7, -0.2, 0.0, 0.3, 0.9}) {
      const double h = 1e-6;
      const double fd = (surrogate_primitive(x + h, 1.0, kind) - surrogate_primitive(x - h, 1.0, kind)) / (2 * h);
      EXPECT_NEAR(fd, surrogate_grad(x, 1.0, kind), 1e-6);
    }
  }
}

TEST(LifSequence, SilentWithoutInput) {
  const Tensor s = lif_sequence(Tensor::zeros({5, 4}), LifParams{}, LifState::resting({4}, LifParams{}));
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(LifSequence, GeometricApproachNeverFires) {
  LifState st = LifState::resting({1}, LifParams{});
  for (int t = 1; t <= 20; ++t) {
    const auto r = lif_step(st, Tensor::ones({1}), LifParams{});
    EXPECT_EQ(r.potential[0], 1.0 - std::ldexp(1.0, -t)) << t;
    EXPECT_EQ(r.spikes[0], 0.0);
    st = r.next;
  }
  const Tensor s = lif_sequence(Tensor::ones({20, 1}), LifParams{}, LifState::resting({1}, LifParams{}));
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(LifSequence, FiresEveryStep) {
  LifState st = LifState::resting({1}, LifParams{});
  for (int t = 0; t < 8; ++t) {
    const auto r = lif_step(st, Tensor::full({1}, 2.0), LifParams{});
    EXPECT_EQ(r.potential[0], 1.0);
    EXPECT_EQ(r.spikes[0], 1.0);
    st = r.next;
  }
  const Tensor s = lif_sequence(Tensor::full({8, 1}, 2.0), LifParams{}, LifState::resting({1}, LifParams{}));
  for (double v : s.values()) EXPECT_EQ(v, 1.0);
}

TEST(LifSequence, OutputIsBinaryAndShaped) {
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({6, 2, 3}, rng, -1.0, 3.0);
  const Tensor s = lif_sequence(x, LifParams{}, LifState::resting({2, 3}, LifParams{}));
  EXPECT_EQ(s.shape(), x.shape());
  for (double v : s.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(LifSequence, SurrogateOnlyShapesBackward) {
  // Forward values do not depend on the surrogate choice.
  std::mt19937_64 rng(4);
  const Tensor x = oracle::random_tensor({5, 7}, rng, -1.0, 3.0);
  LifParams a, b;
  b.surrogate = Surrogate::sigmoid;
  b.surrogate_width = 0.3;
  const Tensor sa = lif_sequence(x, a, LifState::resting({7}, a));
  const Tensor sb = lif_sequence(x, b, LifState::resting({7}, b));
  EXPECT_EQ(oracle::max_abs_diff(sa, sb), 0.0);
}
