#include "fsta/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fsta/frequency.hpp"

namespace fsta {

namespace {

LayerFiring count_record(const SpikeRecord& r) {
  LayerFiring lf{r.name, 0, r.spikes.numel(), 0.0};
  for (double v : r.spikes.values()) {
    if (v == 1.0) {
      ++lf.spikes;
    } else if (v != 0.0) {
      throw std::domain_error("firing_rate: layer '" + r.name + "' holds non-binary value " + std::to_string(v));
    }
  }
  return lf;
}

void finish(FiringStats& s) {
  s.total_spikes = 0;
  s.total_slots = 0;
  for (auto& l : s.layers) {
    l.rate = l.slots ? static_cast<double>(l.spikes) / static_cast<double>(l.slots) : 0.0;
    s.total_spikes += l.spikes;
    s.total_slots += l.slots;
  }
  s.network_rate = s.total_slots ? static_cast<double>(s.total_spikes) / static_cast<double>(s.total_slots) : 0.0;
}

// Output positions whose window covers input coordinate i, for each i.
std::vector<std::size_t> coverage(std::size_t extent, std::size_t k, std::size_t stride, std::size_t pad) {
  std::vector<std::size_t> cov(extent, 0);
  if (extent + 2 * pad < k) return cov;
  const std::size_t out = (extent + 2 * pad - k) / stride + 1;
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + j) - static_cast<std::ptrdiff_t>(pad);
      if (i >= 0 && i < static_cast<std::ptrdiff_t>(extent)) ++cov[static_cast<std::size_t>(i)];
    }
  return cov;
}

double spike_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

FiringStats firing_rate(std::span<const SpikeRecord> records) {
  if (records.empty()) throw std::invalid_argument("firing_rate: trace holds no spiking layer");
  FiringStats s;
  for (const auto& r : records) s.layers.push_back(count_record(r));
  finish(s);
  return s;
}

FiringStats firing_rate(const ForwardTrace& trace) { return firing_rate(std::span<const SpikeRecord>(trace.spikes)); }

void accumulate(FiringStats& into, const FiringStats& more) {
  if (into.layers.empty()) {
    into = more;
    return;
  }
  if (into.layers.size() != more.layers.size()) throw std::invalid_argument("accumulate: layer structure differs");
  for (std::size_t i = 0; i < into.layers.size(); ++i) {
    if (into.layers[i].name != more.layers[i].name) throw std::invalid_argument("accumulate: layer structure differs");
    into.layers[i].spikes += more.layers[i].spikes;
    into.layers[i].slots += more.layers[i].slots;
  }
  finish(into);
}

double conv_spike_acs(const Tensor& spikes, std::size_t kernel, std::size_t stride, std::size_t padding,
                      std::size_t out_channels) {
  if (spikes.rank() < 3) throw ShapeError("conv_spike_acs: expected [...,C,H,W], got " + to_string(spikes.shape()));
  const std::size_t h = spikes.dim(spikes.rank() - 2), w = spikes.dim(spikes.rank() - 1);
  const auto cy = coverage(h, kernel, stride, padding);
  const auto cx = coverage(w, kernel, stride, padding);
  const auto v = spikes.values();
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) continue;
    const std::size_t x = i % w, y = (i / w) % h;
    total += v[i] * static_cast<double>(cy[y] * cx[x]);
  }
  return total * static_cast<double>(out_channels);
}

double conv_macs(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t out_h,
                 std::size_t out_w) {
  return static_cast<double>(in_channels) * static_cast<double>(out_channels) * static_cast<double>(kernel * kernel) *
         static_cast<double>(out_h * out_w);
}

double fsta_macs(std::size_t t, std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
  const double tchw = static_cast<double>(t * c * h * w);
  const double hw = static_cast<double>(h * w);
  const double k2 = static_cast<double>(k * k);
  // avg+max pooling, channel mean for SA, X*T_w, X*freq_w, two fusion scales
  double macs = 7.0 * tchw;
  macs += 3.0 * static_cast<double>(t * c);                          // alpha/beta mix, channel mean
  macs += static_cast<double>(t * t);                                // temporal map
  macs += k2 * k2 * hw + k2 * hw;                                    // Conv_dct, 1x1 compress
  return macs;
}

OpCounts count_ops(const Network& net, const ForwardTrace& trace) {
  if (trace.batch == 0 || trace.timesteps != net.spec().timesteps) {
    throw std::invalid_argument("count_ops: trace does not belong to this network (batch or T mismatch)");
  }
  const double n = static_cast<double>(trace.batch);
  const double steps = static_cast<double>(trace.timesteps);
  auto need = [&](const std::string& name) -> const SpikeRecord& {
    const SpikeRecord* r = trace.find(name);
    if (!r) throw std::invalid_argument("count_ops: trace has no record '" + name + "' for this network");
    return *r;
  };

  OpCounts out;
  const SpikeRecord* src = nullptr;  // null: the current activation is real-valued
  auto conv_cost = [&](const ConvUnit& cu, const Shape& in, const Shape& outs) {
    if (src) {
      out.acs += conv_spike_acs(src->spikes, cu.kernel(), cu.stride, cu.padding, cu.out_channels()) / n;
    } else {
      out.macs += steps * conv_macs(in[0], cu.out_channels(), cu.kernel(), outs[1], outs[2]);
    }
  };

  for (const Layer& layer : net.layers()) {
    switch (layer.spec.kind) {
      case LayerKind::conv_bn_lif:
        conv_cost(*layer.conv1, layer.in_shape, layer.out_shape);
        src = &need(layer.name);
        break;
      case LayerKind::residual_block: {
        conv_cost(*layer.conv1, layer.in_shape, layer.out_shape);
        if (layer.shortcut) conv_cost(*layer.shortcut, layer.in_shape, layer.out_shape);
        src = &need(layer.name + ".lif1");
        conv_cost(*layer.conv2, layer.out_shape, layer.out_shape);
        const SpikeRecord& lif2 = need(layer.name + ".lif2");
        src = net.spec().residual == ResidualMode::membrane ? &lif2 : nullptr;
        break;
      }
      case LayerKind::fsta: {
        const Shape& s = layer.in_shape;
        out.macs += fsta_macs(trace.timesteps, s[0], s[1], s[2], layer.spec.fsta.kernel_size);
        src = nullptr;
        break;
      }
      case LayerKind::avgpool:
        if (src) {
          out.acs += spike_sum(src->spikes) / n;
        } else {
          out.macs += steps * static_cast<double>(numel(layer.in_shape));
        }
        src = nullptr;
        break;
      case LayerKind::flatten:
        break;
      case LayerKind::classifier: {
        const double d_out = static_cast<double>(layer.spec.channels);
        if (src) {
          out.acs += spike_sum(src->spikes) * d_out / n;
        } else {
          out.macs += steps * static_cast<double>(layer.in_shape[0]) * d_out;
        }
        src = nullptr;
        break;
      }
    }
  }
  out.params = net.parameter_count();
  out.frozen_params = net.frozen_parameter_count();
  return out;
}

void EnergyModel::validate() const {
  if (!(e_ac > 0.0) || !(e_mac > 0.0)) throw std::invalid_argument("energy model: e_ac and e_mac must be positive");
}

double energy(const OpCounts& counts, const EnergyModel& model) {
  model.validate();
  return counts.acs * model.e_ac + counts.macs * model.e_mac;
}

SpectrumEntry analyze_map(const Tensor& probability) {
  if (probability.rank() != 2) throw ShapeError("analyze_map: expected [H,W], got " + to_string(probability.shape()));
  SpectrumEntry e;
  e.probability = probability;
  const Spectrum spec = center_spectrum(dft2d(probability));
  e.magnitude = spec.magnitudes;
  std::vector<double> lg(spec.magnitudes.numel());
  for (std::size_t i = 0; i < lg.size(); ++i) lg[i] = std::log1p(spec.magnitudes[i]);
  e.log_magnitude = Tensor(spec.magnitudes.shape(), std::move(lg));
  const std::size_t h = probability.dim(0), w = probability.dim(1);
  for (std::size_t i = 0; i < kBandHalfwidths.size(); ++i) {
    const std::size_t hw = kBandHalfwidths[i];
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    e.horizontal[i] = 2 * hw < h ? band_energy(spec, Band::horizontal_axis(hw)) : nan;
    e.vertical[i] = 2 * hw < w ? band_energy(spec, Band::vertical_axis(hw)) : nan;
  }
  return e;
}

SpectrumReport spectrum_report(std::span<const ForwardTrace> traces) {
  if (traces.empty()) throw std::invalid_argument("spectrum_report: need at least one trace");
  const ForwardTrace& first = traces.front();
  std::vector<const SpikeRecord*> layers;
  for (const auto& r : first.spikes)
    if (r.spikes.rank() == 5) layers.push_back(&r);

  SpectrumReport rep;
  rep.timesteps = first.timesteps;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const SpikeRecord& r0 = *layers[li];
    const Shape& s = r0.spikes.shape();
    const std::size_t t = s[0], n = s[1], c = s[2], h = s[3], w = s[4];
    std::vector<double> acc(t * h * w, 0.0);
    for (const auto& tr : traces) {
      const SpikeRecord* r = tr.find(r0.name);
      if (!r || r->spikes.shape() != s) {
        throw std::invalid_argument("spectrum_report: traces disagree on layer '" + r0.name + "' (shape " +
                                    to_string(s) + ")");
      }
      const auto v = r->spikes.values();
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t b = 0; b < n * c; ++b)
          for (std::size_t p = 0; p < h * w; ++p) acc[ti * h * w + p] += v[(ti * n * c + b) * h * w + p];
    }
    const double denom = static_cast<double>(traces.size() * n * c);
    for (std::size_t ti = 0; ti < t; ++ti) {
      std::vector<double> map(acc.begin() + static_cast<std::ptrdiff_t>(ti * h * w),
                              acc.begin() + static_cast<std::ptrdiff_t>((ti + 1) * h * w));
      for (auto& m : map) m /= denom;
      SpectrumEntry e = analyze_map(Tensor({h, w}, std::move(map)));
      e.layer = r0.name;
      e.layer_index = li;
      e.timestep = ti;
      rep.entries.push_back(std::move(e));
    }
  }
  for (const auto& tr : traces) {
    std::size_t count = 0;
    for (const auto& r : tr.spikes) count += r.spikes.rank() == 5;
    if (count != layers.size()) throw std::invalid_argument("spectrum_report: traces hold different layer sets");
  }
  return rep;
}

ReductionReport compare_runs(const FiringStats& base, const FiringStats& fsta) {
  if (base.layers.size() != fsta.layers.size()) {
    throw std::invalid_argument("compare_runs: layer count differs (" + std::to_string(base.layers.size()) + " vs " +
                                std::to_string(fsta.layers.size()) + ")");
  }
  auto make = [](const std::string& name, double b, double f) {
    Reduction r{name, b, f, std::nullopt};
    if (b != 0.0) r.reduction = (b - f) / b;
    return r;
  };
  ReductionReport rep;
  for (std::size_t i = 0; i < base.layers.size(); ++i) {
    if (base.layers[i].name != fsta.layers[i].name) {
      throw std::invalid_argument("compare_runs: layer " + std::to_string(i) + " is '" + base.layers[i].name +
                                  "' in one run and '" + fsta.layers[i].name + "' in the other");
    }
    rep.layers.push_back(make(base.layers[i].name, base.layers[i].rate, fsta.layers[i].rate));
  }
  rep.network = make("network", base.network_rate, fsta.network_rate);
  return rep;
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_matrix_csv: expected [H,W], got " + to_string(map.shape()));
  auto out = open_out(path);
  const std::size_t h = map.dim(0), w = map.dim(1);
  for (std::size_t x = 0; x < w; ++x) out << (x ? "," : "") << "c" << x;
  out << "\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out << (x ? "," : "") << csv_number(map[y * w + x]);
    out << "\n";
  }
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm: expected [H,W], got " + to_string(map.shape()));
  auto out = open_out(path);
  const std::size_t h = map.dim(0), w = map.dim(1);
  double peak = 0.0;
  for (double v : map.values()) peak = std::max(peak, v);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : map.values()) {
    const double s = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
}

void write_firing_csv(const std::filesystem::path& path, const FiringStats& stats) {
  auto out = open_out(path);
  out << "layer,spikes,slots,rate\n";
  for (const auto& l : stats.layers) out << l.name << "," << l.spikes << "," << l.slots << "," << csv_number(l.rate) << "\n";
  out << "network," << stats.total_spikes << "," << stats.total_slots << "," << csv_number(stats.network_rate) << "\n";
}

FiringStats read_firing_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("layer,spikes,slots,rate", 0) != 0) {
    throw std::runtime_error(path.string() + ": not a firing-rate table (header '" + line + "')");
  }
  FiringStats s;
  bool have_network = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, spikes, slots, rate;
    if (!std::getline(ss, name, ',') || !std::getline(ss, spikes, ',') || !std::getline(ss, slots, ',') ||
        !std::getline(ss, rate)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    }
    LayerFiring lf;
    try {
      lf = LayerFiring{name, std::stoull(spikes), std::stoull(slots), std::stod(rate)};
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    if (name == "network") {
      have_network = true;
      s.total_spikes = lf.spikes;
      s.total_slots = lf.slots;
      s.network_rate = lf.rate;
    } else {
      s.layers.push_back(std::move(lf));
    }
  }
  if (!have_network) throw std::runtime_error(path.string() + ": missing 'network' row");
  return s;
}

void write_energy_csv(const std::filesystem::path& path, const OpCounts& counts, const EnergyModel& model) {
  auto out = open_out(path);
  const double e = energy(counts, model);
  out << "quantity,value\n";
  out << "acs," << csv_number(counts.acs) << "\n";
  out << "macs," << csv_number(counts.macs) << "\n";
  out << "params," << counts.params << "\n";
  out << "frozen_params," << counts.frozen_params << "\n";
  out << "e_ac_j," << csv_number(model.e_ac) << "\n";
  out << "e_mac_j," << csv_number(model.e_mac) << "\n";
  out << "energy_j," << csv_number(e) << "\n";
  out << "energy_mj," << csv_number(e * 1e3) << "\n";
}

void write_reduction_csv(const std::filesystem::path& path, const ReductionReport& report) {
  auto out = open_out(path);
  out << "layer,base_rate,fsta_rate,reduction\n";
  auto row = [&](const Reduction& r) {
    out << r.name << "," << csv_number(r.base) << "," << csv_number(r.fsta) << ","
        << (r.reduction ? csv_number(*r.reduction) : std::string("n/a")) << "\n";
  };
  for (const auto& r : report.layers) row(r);
  row(report.network);
}

std::vector<std::filesystem::path> write_spectrum_report(const std::filesystem::path& dir,
                                                         const SpectrumReport& report) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& e : report.entries) {
    const std::string stem = "layer" + std::to_string(e.layer_index) + "_t" + std::to_string(e.timestep);
    write_matrix_csv(dir / (stem + ".csv"), e.magnitude);
    write_pgm(dir / (stem + ".pgm"), e.magnitude);
    write_matrix_csv(dir / (stem + "_log.csv"), e.log_magnitude);
    files.push_back(dir / (stem + ".csv"));
    files.push_back(dir / (stem + ".pgm"));
    files.push_back(dir / (stem + "_log.csv"));
  }
  const auto bands = dir / "bands.csv";
  auto out = open_out(bands);
  out << "layer_index,layer,timestep";
  for (auto hw : kBandHalfwidths) out << ",horizontal_" << hw;
  for (auto hw : kBandHalfwidths) out << ",vertical_" << hw;
  out << "\n";
  for (const auto& e : report.entries) {
    out << e.layer_index << "," << e.layer << "," << e.timestep;
    for (double v : e.horizontal) out << "," << csv_number(v);
    for (double v : e.vertical) out << "," << csv_number(v);
    out << "\n";
  }
  files.push_back(bands);
  return files;
}

std::string format_mj(double joules) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f mJ", joules * 1e3);
  return buf;
}

}  // namespace fsta
