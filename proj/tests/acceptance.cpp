// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstring>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <tuple>

#include "fsta/analysis.hpp"
#include "fsta/attention.hpp"
#include "fsta/data.hpp"
#include "fsta/frequency.hpp"
#include "fsta/neuron.hpp"
#include "fsta/ops.hpp"
#include "fsta/train.hpp"
#include "fsta_cli/config.hpp"
#include "oracles.hpp"

using namespace fsta;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s criterion %d: %s [%.2fs] %s\n", o.pass ? "PASS" : "FAIL", id, title, secs, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum_all(mul(y, oracle::random_tensor(y.shape(), rng, -1.0, 1.0)));
}

Tensor leaf(Shape s, std::mt19937_64& rng) { return oracle::random_tensor(std::move(s), rng).detach(true); }

Outcome energy_rows() {
  const std::array<std::array<double, 3>, 3> rows{{{260.05e6, 67.26e6, 0.54}, {2.14e9, 582.87e6, 4.60}, {2.45e9, 1.05e9, 7.03}}};
  Outcome o;
  for (const auto& r : rows) {
    const double mj = energy(OpCounts{r[0], r[1], 0, 0}) * 1e3;
    const double rel = std::abs(mj - r[2]) / r[2];
    o.pass &= rel <= 0.01;
    o.detail += fmt("%.3f mJ vs %.2f (%.2f%%); ", mj, r[2], rel * 100);
  }
  return o;
}

Outcome gap_identity() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> ext(1, 16);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = ext(rng), w = ext(rng);
    const Tensor x = oracle::random_tensor({h, w}, rng);
    const double want = mean_all(x).item() * double(h * w);
    const double got = dct2d(x).at({0, 0});
    worst = std::max(worst, std::abs(got - want) / std::max(std::abs(want), 1e-300));
  }
  return {worst <= 1e-12, fmt("max rel err %.2e over 100 tensors", worst)};
}

Outcome kernel_table() {
  Outcome o;
  std::mt19937_64 rng(3);
  for (std::size_t k : {3u, 5u, 7u}) {
    const DctBasis b = dct_basis(k);
    const SpatialAttention sa(k, rng);
    const Tensor x = oracle::random_binary({2, 3, 9, 11}, rng);
    const Tensor y = sa_forward(sa, x);
    o.pass &= b.channels() == k * k && b.weights.dim(0) == k * k && sa.padding() == (k - 1) / 2 && y.shape() == x.shape();
    o.detail += std::to_string(k) + "x" + std::to_string(k) + " -> " + std::to_string(b.weights.dim(0)) + " channels; ";
  }
  return o;
}

Outcome transform_suite() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> ext(1, 12);
  double worst_abs = 0.0, worst_parseval = 0.0, worst_conj = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = ext(rng);
    const Tensor v = oracle::random_tensor({n}, rng);
    const auto X = dft1d(v.values());
    const std::vector<std::complex<double>> vc(v.values().begin(), v.values().end());
    const auto ref = oracle::dft(vc);
    std::vector<std::complex<double>> Xc(n);
    for (std::size_t k = 0; k < n; ++k) {
      Xc[k] = X[k];
      worst_abs = std::max(worst_abs, std::abs(X[k] - ref[k]));
    }
    const auto inv = idft1d(X);
    const auto inv_ref = oracle::idft(Xc);
    for (std::size_t k = 0; k < n; ++k) worst_abs = std::max(worst_abs, std::abs(inv[k] - inv_ref[k]));

    const std::size_t m = ext(rng), w = ext(rng);
    const Tensor x = oracle::random_tensor({m, w}, rng);
    const auto F = dft2d(x);
    const auto F_ref = oracle::dft2(x);
    double ex = 0.0, eF = 0.0;
    for (double a : x.values()) ex += a * a;
    for (std::size_t k = 0; k < F.size(); ++k) {
      worst_abs = std::max(worst_abs, std::abs(F[k] - F_ref[k]));
      eF += std::norm(F[k]);
    }
    worst_parseval = std::max(worst_parseval, std::abs(eF / double(m * w) - ex) / ex);
    for (std::size_t u = 0; u < m; ++u)
      for (std::size_t c = 0; c < w; ++c)
        worst_conj = std::max(worst_conj, std::abs(F[u * w + c] - std::conj(F[((m - u) % m) * w + (w - c) % w])));
  }
  return {worst_abs <= 1e-10 && worst_parseval <= 1e-10 && worst_conj <= 1e-10,
          fmt("oracle abs err %.1e, Parseval rel err %.1e, conjugate err %.1e", worst_abs, worst_parseval, worst_conj)};
}

Outcome gradient_suite() {
  std::mt19937_64 rng(5);
  struct Case {
    const char* name;
    oracle::ScalarFn f;
    std::vector<Tensor> in;
  };
  std::vector<Case> cases;
  cases.push_back({"conv2d", [](const auto& a) { return project(conv2d(a[0], a[1], 2, 1), 1); },
                   {leaf({2, 2, 5, 5}, rng), leaf({3, 2, 3, 3}, rng)}});
  cases.push_back({"linear", [](const auto& a) { return project(linear(a[0], a[1], a[2]), 2); },
                   {leaf({3, 4}, rng), leaf({5, 4}, rng), leaf({5}, rng)}});
  cases.push_back({"elementwise",
                   [](const auto& a) { return project(add(mul(a[0], a[1]), sub(sigmoid(a[0]), scalar_mul(a[1], 0.5))), 3); },
                   {leaf({3, 2, 4, 4}, rng), leaf({4, 4}, rng)}});
  for (auto kind : {ReduceKind::sum, ReduceKind::mean, ReduceKind::max}) {
    cases.push_back({"reduce", [kind](const auto& a) {
                       const std::vector<std::size_t> ax{0, 2};
                       return project(reduce(kind, a[0], ax), 4);
                     },
                     {leaf({3, 2, 4}, rng)}});
  }
  cases.push_back({"batch_norm",
                   [](const auto& a) {
                     BatchNormState bn(3);
                     bn.scale.value = a[1];
                     bn.shift.value = a[2];
                     return project(batch_norm(a[0], bn, true), 5);
                   },
                   {leaf({4, 3, 3, 3}, rng), leaf({3}, rng), leaf({3}, rng)}});
  LifParams lp;
  lp.detach_reset = false;
  lp.surrogate = Surrogate::sigmoid;
  cases.push_back({"lif (smoothed)",
                   [lp](const auto& a) { return project(lif_sequence(a[0], lp, LifState{a[1]}, FiringMode::smoothed), 6); },
                   {leaf({4, 2, 3}, rng), leaf({2, 3}, rng)}});
  const SpatialAttention sa(3, rng);
  cases.push_back({"spatial attention",
                   [sa](const auto& a) {
                     SpatialAttention s = sa;
                     s.compress_w.value = a[1];
                     s.compress_b.value = a[2];
                     return project(s.forward(a[0]), 7);
                   },
                   {leaf({3, 2, 5, 5}, rng), leaf({1, 9, 1, 1}, rng), leaf({1}, rng)}});
  const TemporalAttention ta(3, 0.5, 0.5, rng);
  cases.push_back({"temporal attention",
                   [ta](const auto& a) {
                     TemporalAttention t = ta;
                     t.alpha.value = a[1];
                     t.beta.value = a[2];
                     t.map_w.value = a[3];
                     t.map_b.value = a[4];
                     return project(t.forward(a[0]), 8);
                   },
                   {leaf({3, 2, 4, 4}, rng), leaf({1}, rng), leaf({1}, rng), leaf({3, 3}, rng), leaf({3}, rng)}});
  FstaConfig cfg;
  cfg.kernel_size = 3;
  const FstaModule fm(3, cfg, rng);
  const Tensor xb = oracle::random_binary({3, 2, 5, 5}, rng, 0.4);
  cases.push_back({"fsta parameters",
                   [fm, xb](const auto& a) {
                     FstaModule m = fm;
                     m.ta.alpha.value = a[0];
                     m.ta.beta.value = a[1];
                     m.ta.map_w.value = a[2];
                     m.sa.compress_w.value = a[3];
                     m.scale_t.value = a[4];
                     m.scale_s.value = a[5];
                     return project(m.forward(xb), 9);
                   },
                   {leaf({1}, rng), leaf({1}, rng), leaf({3, 3}, rng), leaf({1, 9, 1, 1}, rng), leaf({1}, rng),
                    leaf({1}, rng)}});
  Outcome o;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double e = oracle::gradient_error(c.f, c.in);
    if (e > worst) {
      worst = e;
      worst_name = c.name;
    }
    if (e > 1e-4) {
      o.pass = false;
      o.detail += std::string(c.name) + fmt(" err %.2e; ", e);
    }
  }
  o.detail += fmt("%.0f ops, worst rel err %.2e", double(cases.size()), worst) + " (" + worst_name + ")";
  return o;
}

Outcome lif_traces() {
  LifParams p;
  const auto a = lif_step(LifState{Tensor::scalar(0.0)}, Tensor::scalar(3.0), p);
  const auto b = lif_step(LifState{Tensor::scalar(0.8)}, Tensor::scalar(0.0), p);
  bool ok = a.potential.item() == 1.5 && a.spikes.item() == 1.0 && a.next.h.item() == 0.0;
  ok &= std::abs(b.potential.item() - 0.4) < 1e-15 && b.spikes.item() == 0.0 && std::abs(b.next.h.item() - 0.4) < 1e-15;
  LifState st = LifState::resting({1}, p);
  for (int t = 1; t <= 30; ++t) {
    const auto r = lif_step(st, Tensor::ones({1}), p);
    ok &= r.potential[0] == 1.0 - std::ldexp(1.0, -t) && r.spikes[0] == 0.0;
    st = r.next;
  }
  return {ok, "spike/reset V=1.5, leak 0.8->0.4, V_t = 1 - 2^-t for 30 steps"};
}

Outcome fsta_structure() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> ext(1, 8);
  bool shape = true, sparsity = true, range = true;
  for (int i = 0; i < 40; ++i) {
    const std::size_t T = ext(rng);
    FstaConfig cfg;
    cfg.kernel_size = i % 2 ? 3 : 7;
    cfg.mode = i % 3 ? FusionMode::serial : FusionMode::parallel;
    const FstaModule m(T, cfg, rng);
    const Tensor x = oracle::random_binary({T, ext(rng), ext(rng), ext(rng)}, rng, 0.4);
    AttentionTrace tr;
    const Tensor y = m.forward(x, &tr);
    shape &= y.shape() == x.shape();
    for (std::size_t k = 0; k < x.numel(); ++k) sparsity &= (x[k] == 0.0) == (y[k] == 0.0);
    for (const Tensor* w : {&tr.freq_w, &tr.t_w})
      for (double v : w->values()) range &= v > 0.0 && v < 1.0;
  }
  FstaConfig cfg;
  cfg.kernel_size = 3;
  FstaModule m(3, cfg, rng);
  m.scale_t.value = Tensor({1}, {1.0}, true);
  m.scale_s.value = Tensor({1}, {0.0}, true);
  const Tensor x = oracle::random_binary({3, 2, 6, 6}, rng);
  const bool projection = oracle::max_abs_diff(fsta_forward(m, x), ta_forward(m.ta, x)) <= 1e-15;

  FstaModule f(3, cfg, rng);
  const std::vector<double> dct0(f.sa.dct_weights.value.values().begin(), f.sa.dct_weights.value.values().end());
  const double compress0 = f.sa.compress_w.value[0];
  OptimizerState st;
  const auto params = f.parameters();
  for (int i = 0; i < 100; ++i) optimizer_step(params, backward(project(fsta_forward(f, x), 1)), st, TrainConfig{}, 0.05);
  const auto dct1 = f.sa.dct_weights.value.values();
  const bool frozen = std::equal(dct0.begin(), dct0.end(), dct1.begin()) && f.sa.compress_w.value[0] != compress0;
  const bool ok = shape && sparsity && range && projection && frozen;
  return {ok, std::string("shape ") + (shape ? "ok" : "BAD") + ", sparsity " + (sparsity ? "ok" : "BAD") + ", ranges " +
                  (range ? "ok" : "BAD") + ", projection " + (projection ? "ok" : "BAD") + ", DCT freeze over 100 steps " +
                  (frozen ? "ok" : "BAD")};
}

Outcome toy_training() {
  constexpr int kSeeds = 3;
  constexpr std::size_t kEpochs = 10;
  double acc[2] = {0, 0}, rate[2] = {0, 0};
  FiringStats pooled[2];
  std::string per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    TwoClassParams tp;
    tp.samples = 512;
    tp.seed = 100 + seed;
    const Dataset train = synthetic_twoclass(tp);
    tp.samples = 256;
    tp.seed = 200 + seed;
    const Dataset test = synthetic_twoclass(tp);
    for (int with = 0; with < 2; ++with) {
      NetworkSpec spec = snn_tiny(1, 16, 16, 2, 4);
      if (with) spec = insert_fsta(spec, default_fsta_placement(spec), FstaConfig{});
      Network net = Network::build(spec, seed);
      TrainConfig cfg;
      cfg.epochs = kEpochs;
      cfg.batch_size = 32;
      cfg.lr = 0.1;
      cfg.seed = seed;
      TrainState st(seed);
      for (std::size_t e = 0; e < kEpochs; ++e) train_epoch(net, train, cfg, st);
      FiringStats fs;
      const Metrics m = evaluate(net, test, 64, &fs);
      acc[with] += m.accuracy / kSeeds;
      rate[with] += m.firing_rate / kSeeds;
      if (seed == 0) pooled[with] = fs;
      else accumulate(pooled[with], fs);
      char line[96];
      std::snprintf(line, sizeof line, "[seed %d %s acc %.3f rate %.4f] ", seed, with ? "fsta" : "base", m.accuracy,
                    m.firing_rate);
      per_seed += line;
    }
  }
  const ReductionReport rep = compare_runs(pooled[0], pooled[1]);
  const double red = rep.network.reduction.value_or(0.0);
  Outcome o;
  o.pass = acc[1] >= acc[0] && rate[1] < rate[0];
  o.detail = fmt("mean acc base %.4f fsta %.4f; mean firing base %.4f fsta %.4f", acc[0], acc[1], rate[0], rate[1]) +
             fmt("; network reduction %.2f%% ", red * 100) + per_seed;
  return o;
}

Outcome orientation_check() {
  auto bands_of = [](const Tensor& map) {
    ForwardTrace tr;
    tr.timesteps = 1;
    tr.batch = 1;
    tr.spikes.push_back({"probe", 0, reshape(map, {1, 1, 1, map.dim(0), map.dim(1)})});
    const auto rep = spectrum_report(std::vector<ForwardTrace>{tr});
    return std::pair{rep.entries[0].horizontal[0], rep.entries[0].vertical[0]};
  };
  GratingParams g;
  g.samples = 32;
  double min_v = 1.0, min_h = 1.0, mix_h = 0.0, mix_v = 0.0;
  for (auto [mix, target] : {std::pair{0.0, &min_v}, std::pair{1.0, &min_h}}) {
    g.orientation_mix = mix;
    const Dataset d = synthetic_gratings(g);
    for (std::size_t s = 0; s < d.size(); ++s) {
      const Tensor img({16, 16}, {d.images.values().begin() + s * 256, d.images.values().begin() + (s + 1) * 256});
      const auto [h, v] = bands_of(img);
      *target = std::min(*target, mix == 0.0 ? h : v);
    }
  }
  const Tensor vert = grating_image(16, 16, 4.0, Orientation::vertical, 0.3);
  const Tensor horiz = grating_image(16, 16, 4.0, Orientation::horizontal, 1.1);
  std::tie(mix_h, mix_v) = bands_of(scalar_mul(add(vert, horiz), 0.5));
  const bool split = mix_h < 0.99 && mix_v < 0.99 && std::abs(mix_h - mix_v) < 0.05;
  return {min_v >= 0.99 && min_h >= 0.99 && split,
          fmt("vertical gratings horizontal_axis(0) min %.4f; horizontal gratings vertical_axis(0) min %.4f; mixed %.3f/%.3f",
              min_v, min_h, mix_h, mix_v)};
}

Outcome serialization_suite() {
  std::mt19937_64 rng(10);
  const Tensor t = oracle::random_tensor({2, 3, 4, 5}, rng, -1e6, 1e6);
  const Tensor back = decode_tensor(encode_tensor(t, DType::f64));
  bool exact = back.shape() == t.shape();
  for (std::size_t i = 0; exact && i < t.numel(); ++i) exact = std::memcmp(&back.values()[i], &t.values()[i], 8) == 0;
  const Tensor spikes = oracle::random_binary({4, 2, 3, 3}, rng);
  exact &= oracle::max_abs_diff(decode_tensor(encode_tensor(spikes, DType::u8)), spikes) == 0.0;
  exact &= encode_tensor(t, DType::f64).size() == container_header_size(4) + t.numel() * 8 && container_header_size(4) == 23;

  std::vector<std::uint8_t> batch(kCifarBatchBytes, 0);
  for (std::size_t r = 0; r < kCifarRecordsPerBatch; ++r) batch[r * kCifarRecordBytes] = static_cast<std::uint8_t>(r % 10);
  bool cifar = kCifarRecordBytes == 3073 && kCifarBatchBytes == 30730000 && decode_cifar10_batch(batch).size() == 10000;
  for (std::size_t n : {kCifarBatchBytes - 1, kCifarBatchBytes + 1, kCifarRecordBytes}) {
    std::vector<std::uint8_t> wrong(n, 0);
    try {
      decode_cifar10_batch(wrong);
      cifar = false;
    } catch (const std::runtime_error&) {
    }
  }

  const std::string text =
      "seed: 4\nnetwork: {arch: snn-tiny, timesteps: 3}\nfsta: {kernel_size: 5, mode: parallel, placement: [1]}\n"
      "train: {epochs: 2, lr: 0.3, optimizer: adam}\ndataset: {kind: synthetic_gratings, noise: 0.1}\n";
  const cli::RunConfig a = cli::parse_config_text(text);
  const std::string s = cli::serialize_config(a);
  const bool fixpoint = cli::parse_config_text(s) == a && cli::serialize_config(cli::parse_config_text(s)) == s;
  return {exact && cifar && fixpoint, std::string("container bit-exact ") + (exact ? "ok" : "BAD") + ", CIFAR sizes " +
                                          (cifar ? "ok" : "BAD") + ", config fixpoint " + (fixpoint ? "ok" : "BAD")};
}

}  // namespace

int main() {
  criterion(1, "energy arithmetic", energy_rows);
  criterion(2, "GAP identity", gap_identity);
  criterion(3, "DCT kernel sizes and spatial extent", kernel_table);
  criterion(4, "transform oracle suite", transform_suite);
  criterion(5, "gradient suite", gradient_suite);
  criterion(6, "LIF trace suite", lif_traces);
  criterion(7, "FSTA structural suite", fsta_structure);
  criterion(8, "toy training, accuracy and firing rate", toy_training);
  criterion(9, "spectrum orientation check", orientation_check);
  criterion(10, "serialization and ingestion suite", serialization_suite);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
