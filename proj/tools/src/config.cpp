#include "fsta_cli/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace fsta::cli {

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::cifar10_binary: return "cifar10_binary";
    case DatasetKind::tensor_container: return "tensor_container";
    case DatasetKind::synthetic_gratings: return "synthetic_gratings";
    case DatasetKind::synthetic_twoclass: return "synthetic_twoclass";
  }
  return "unknown";
}

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const YAML::Mark m = at.Mark();
    if (m.is_null()) throw ConfigError(source_ + ": " + msg);
    throw ConfigError(source_ + ":" + std::to_string(m.line + 1) + ": " + msg);
  }

  void require_map(const YAML::Node& n, const std::string& path) const {
    if (!n.IsMap()) fail(n, "'" + path + "' must be a mapping");
  }

  void allow_keys(const YAML::Node& map, const std::string& path, std::initializer_list<std::string_view> keys) const {
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        std::string known;
        for (auto k : keys) known += (known.empty() ? "" : ", ") + std::string(k);
        fail(kv.first, "unknown key '" + key + "'" + (path.empty() ? "" : " in '" + path + "'") + " (allowed: " +
                           known + ")");
      }
    }
  }

  template <class T>
  T scalar(const YAML::Node& n, const std::string& path, const char* what) const {
    if (!n.IsScalar()) fail(n, "'" + path + "' must be " + what);
    try {
      return n.as<T>();
    } catch (const YAML::BadConversion&) {
      fail(n, "'" + path + "' must be " + what + ", got '" + n.Scalar() + "'");
    }
  }

  void get(const YAML::Node& map, const std::string& path, const char* key, double& out) const {
    if (auto n = map[key]) out = scalar<double>(n, join(path, key), "a number");
  }
  void get(const YAML::Node& map, const std::string& path, const char* key, std::optional<double>& out) const {
    if (auto n = map[key]) out = scalar<double>(n, join(path, key), "a number");
  }
  void get(const YAML::Node& map, const std::string& path, const char* key, bool& out) const {
    if (auto n = map[key]) out = scalar<bool>(n, join(path, key), "true or false");
  }
  void get(const YAML::Node& map, const std::string& path, const char* key, std::string& out) const {
    if (auto n = map[key]) out = scalar<std::string>(n, join(path, key), "a string");
  }
  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  void get(const YAML::Node& map, const std::string& path, const char* key, U& out) const {
    if (auto n = map[key]) out = static_cast<U>(unsigned_value(n, join(path, key)));
  }
  void get(const YAML::Node& map, const std::string& path, const char* key, std::vector<double>& out) const {
    if (auto n = map[key]) {
      if (!n.IsSequence()) fail(n, "'" + join(path, key) + "' must be a list of numbers");
      out.clear();
      for (const auto& e : n) out.push_back(scalar<double>(e, join(path, key), "a number"));
    }
  }
  void get(const YAML::Node& map, const std::string& path, const char* key, std::vector<std::string>& out) const {
    if (auto n = map[key]) {
      if (!n.IsSequence()) fail(n, "'" + join(path, key) + "' must be a list of strings");
      out.clear();
      for (const auto& e : n) out.push_back(scalar<std::string>(e, join(path, key), "a string"));
    }
  }

  std::uint64_t unsigned_value(const YAML::Node& n, const std::string& path) const {
    if (!n.IsScalar() || n.Scalar().empty() || n.Scalar()[0] == '-') {
      fail(n, "'" + path + "' must be a non-negative integer");
    }
    return scalar<std::uint64_t>(n, path, "a non-negative integer");
  }

  template <class E>
  E choice(const YAML::Node& n, const std::string& path, std::initializer_list<std::pair<std::string_view, E>> opts) const {
    const auto s = scalar<std::string>(n, path, "a string");
    std::string known;
    for (const auto& [name, value] : opts) {
      if (name == s) return value;
      known += (known.empty() ? "" : ", ") + std::string(name);
    }
    fail(n, "'" + path + "' must be one of {" + known + "}, got '" + s + "'");
  }

  static std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

 private:
  std::string source_;
};

LayerKind layer_kind(const Reader& r, const YAML::Node& n, const std::string& path) {
  return r.choice<LayerKind>(n, path,
                             {{"conv", LayerKind::conv_bn_lif},
                              {"residual", LayerKind::residual_block},
                              {"avgpool", LayerKind::avgpool},
                              {"flatten", LayerKind::flatten},
                              {"classifier", LayerKind::classifier},
                              {"fsta", LayerKind::fsta}});
}

std::string_view layer_kind_key(LayerKind k) {
  switch (k) {
    case LayerKind::conv_bn_lif: return "conv";
    case LayerKind::residual_block: return "residual";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::classifier: return "classifier";
    case LayerKind::fsta: return "fsta";
  }
  return "conv";
}

void read_network(const Reader& r, const YAML::Node& n, NetworkSection& net) {
  r.require_map(n, "network");
  r.allow_keys(n, "network", {"arch", "timesteps", "residual", "neuron", "layers"});
  r.get(n, "network", "arch", net.arch);
  if (net.arch != "snn-tiny" && net.arch != "resnet20-snn" && net.arch != "custom") {
    r.fail(n["arch"], "'network.arch' must be one of {snn-tiny, resnet20-snn, custom}, got '" + net.arch + "'");
  }
  r.get(n, "network", "timesteps", net.timesteps);
  if (net.timesteps == 0) r.fail(n["timesteps"], "'network.timesteps' must be at least 1");
  if (auto m = n["residual"]) {
    net.residual = r.choice<ResidualMode>(m, "network.residual", {{"membrane", ResidualMode::membrane}, {"spike", ResidualMode::spike}});
  }
  if (auto nn = n["neuron"]) {
    r.require_map(nn, "network.neuron");
    r.allow_keys(nn, "network.neuron", {"tau", "v_th", "v_reset", "surrogate", "surrogate_width", "detach_reset"});
    r.get(nn, "network.neuron", "tau", net.neuron.tau);
    r.get(nn, "network.neuron", "v_th", net.neuron.v_th);
    r.get(nn, "network.neuron", "v_reset", net.neuron.v_reset);
    r.get(nn, "network.neuron", "surrogate_width", net.neuron.surrogate_width);
    r.get(nn, "network.neuron", "detach_reset", net.neuron.detach_reset);
    if (auto s = nn["surrogate"]) {
      net.neuron.surrogate = r.choice<Surrogate>(s, "network.neuron.surrogate",
                                                 {{"triangular", Surrogate::triangular}, {"sigmoid", Surrogate::sigmoid}});
    }
    try {
      net.neuron.validate();
    } catch (const std::invalid_argument& e) {
      r.fail(nn, e.what());
    }
  }
  if (auto ls = n["layers"]) {
    if (net.arch != "custom") r.fail(ls, "'network.layers' is only allowed with arch: custom");
    if (!ls.IsSequence()) r.fail(ls, "'network.layers' must be a list");
    net.layers.clear();
    for (std::size_t i = 0; i < ls.size(); ++i) {
      const YAML::Node l = ls[i];
      const std::string path = "network.layers[" + std::to_string(i) + "]";
      r.require_map(l, path);
      r.allow_keys(l, path, {"kind", "channels", "kernel", "stride"});
      if (!l["kind"]) r.fail(l, "'" + path + ".kind' is required");
      LayerSpec spec;
      spec.kind = layer_kind(r, l["kind"], path + ".kind");
      if (spec.kind == LayerKind::avgpool) spec.kernel = 0;
      r.get(l, path, "channels", spec.channels);
      r.get(l, path, "kernel", spec.kernel);
      r.get(l, path, "stride", spec.stride);
      net.layers.push_back(spec);
    }
  }
  if (net.arch == "custom" && net.layers.empty()) r.fail(n, "arch: custom needs a non-empty 'network.layers'");
}

void read_fsta(const Reader& r, const YAML::Node& n, FstaSection& f) {
  r.require_map(n, "fsta");
  r.allow_keys(n, "fsta", {"enabled", "kernel_size", "mode", "placement", "learnable_scales", "alpha", "beta",
                           "scale_t", "scale_s"});
  r.get(n, "fsta", "enabled", f.enabled);
  r.get(n, "fsta", "kernel_size", f.config.kernel_size);
  if (f.config.kernel_size == 0 || f.config.kernel_size % 2 == 0) {
    r.fail(n["kernel_size"], "'fsta.kernel_size' must be odd and positive");
  }
  if (auto m = n["mode"]) {
    f.config.mode = r.choice<FusionMode>(m, "fsta.mode", {{"serial", FusionMode::serial}, {"parallel", FusionMode::parallel}});
  }
  r.get(n, "fsta", "learnable_scales", f.config.learnable_scales);
  r.get(n, "fsta", "alpha", f.config.alpha);
  r.get(n, "fsta", "beta", f.config.beta);
  r.get(n, "fsta", "scale_t", f.config.scale_t);
  r.get(n, "fsta", "scale_s", f.config.scale_s);
  if (auto p = n["placement"]) {
    if (!p.IsSequence()) r.fail(p, "'fsta.placement' must be a list of stage indices");
    std::vector<std::size_t> v;
    for (const auto& e : p) v.push_back(static_cast<std::size_t>(r.unsigned_value(e, "fsta.placement")));
    f.placement = v;
  }
}

void read_train(const Reader& r, const YAML::Node& n, TrainConfig& t) {
  r.require_map(n, "train");
  r.allow_keys(n, "train", {"epochs", "batch_size", "lr", "optimizer", "momentum", "beta1", "beta2", "adam_eps",
                            "weight_decay", "loss", "cosine", "augment", "grad_clip"});
  r.get(n, "train", "epochs", t.epochs);
  r.get(n, "train", "batch_size", t.batch_size);
  r.get(n, "train", "lr", t.lr);
  if (auto o = n["optimizer"]) {
    t.optimizer = r.choice<OptimizerKind>(o, "train.optimizer",
                                          {{"sgd_momentum", OptimizerKind::sgd_momentum}, {"adam", OptimizerKind::adam}});
  }
  r.get(n, "train", "momentum", t.momentum);
  r.get(n, "train", "beta1", t.beta1);
  r.get(n, "train", "beta2", t.beta2);
  r.get(n, "train", "adam_eps", t.adam_eps);
  r.get(n, "train", "weight_decay", t.weight_decay);
  if (auto l = n["loss"]) t.loss = r.choice<LossKind>(l, "train.loss", {{"rate_ce", LossKind::rate_ce}, {"tet", LossKind::tet}});
  r.get(n, "train", "cosine", t.cosine);
  r.get(n, "train", "augment", t.augment);
  r.get(n, "train", "grad_clip", t.grad_clip);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(n, e.what());
  }
}

void read_dataset(const Reader& r, const YAML::Node& n, DatasetDescriptor& d) {
  r.require_map(n, "dataset");
  r.allow_keys(n, "dataset", {"kind", "path", "train_images", "train_labels", "test_images", "test_labels", "classes",
                              "samples", "test_samples", "channels", "height", "width", "period", "orientation_mix",
                              "noise", "blobs", "fine_sigma", "coarse_sigma", "seed", "mean", "std"});
  if (!n["kind"]) r.fail(n, "'dataset.kind' is required");
  d.kind = r.choice<DatasetKind>(n["kind"], "dataset.kind",
                                 {{"cifar10_binary", DatasetKind::cifar10_binary},
                                  {"tensor_container", DatasetKind::tensor_container},
                                  {"synthetic_gratings", DatasetKind::synthetic_gratings},
                                  {"synthetic_twoclass", DatasetKind::synthetic_twoclass}});
  r.get(n, "dataset", "path", d.path);
  r.get(n, "dataset", "train_images", d.train_images);
  r.get(n, "dataset", "train_labels", d.train_labels);
  r.get(n, "dataset", "test_images", d.test_images);
  r.get(n, "dataset", "test_labels", d.test_labels);
  r.get(n, "dataset", "classes", d.classes);
  r.get(n, "dataset", "samples", d.samples);
  r.get(n, "dataset", "test_samples", d.test_samples);
  r.get(n, "dataset", "channels", d.channels);
  r.get(n, "dataset", "height", d.height);
  r.get(n, "dataset", "width", d.width);
  r.get(n, "dataset", "period", d.period);
  r.get(n, "dataset", "orientation_mix", d.orientation_mix);
  r.get(n, "dataset", "noise", d.noise);
  r.get(n, "dataset", "blobs", d.blobs);
  r.get(n, "dataset", "fine_sigma", d.fine_sigma);
  r.get(n, "dataset", "coarse_sigma", d.coarse_sigma);
  r.get(n, "dataset", "seed", d.seed);
  r.get(n, "dataset", "mean", d.mean);
  r.get(n, "dataset", "std", d.stddev);
  if (d.mean.size() != d.stddev.size()) r.fail(n, "'dataset.mean' and 'dataset.std' must have the same length");
  for (double s : d.stddev)
    if (!(s > 0.0)) r.fail(n["std"], "'dataset.std' entries must be positive");
  if (d.orientation_mix < 0.0 || d.orientation_mix > 1.0) r.fail(n["orientation_mix"], "'dataset.orientation_mix' must lie in [0,1]");
  if (d.noise < 0.0) r.fail(n["noise"], "'dataset.noise' must be non-negative");
  if (!(d.period > 0.0)) r.fail(n["period"], "'dataset.period' must be positive");
  if (d.samples == 0 || d.test_samples == 0) r.fail(n, "'dataset.samples' and 'dataset.test_samples' must be positive");
  if (d.channels == 0 || d.height == 0 || d.width == 0) r.fail(n, "dataset extents must be positive");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": malformed YAML: " + e.msg);
  }
  const Reader r(source);
  RunConfig c;
  if (!root || root.IsNull()) throw ConfigError(source + ": empty configuration");
  r.require_map(root, "<root>");
  r.allow_keys(root, "", {"seed", "run_id", "output", "network", "fsta", "train", "dataset", "eval", "spectrum", "energy",
                          "compare"});
  r.get(root, "", "seed", c.seed);
  r.get(root, "", "run_id", c.run_id);
  r.get(root, "", "output", c.output);
  if (auto n = root["network"]) read_network(r, n, c.network);
  if (auto n = root["fsta"]) read_fsta(r, n, c.fsta);
  if (auto n = root["train"]) read_train(r, n, c.train);
  if (auto n = root["dataset"]) {
    read_dataset(r, n, c.dataset);
  } else {
    throw ConfigError(source + ": missing required section 'dataset'");
  }
  if (auto n = root["eval"]) {
    r.require_map(n, "eval");
    r.allow_keys(n, "eval", {"checkpoint", "batch_size"});
    r.get(n, "eval", "checkpoint", c.eval.checkpoint);
    r.get(n, "eval", "batch_size", c.eval.batch_size);
    if (c.eval.batch_size == 0) r.fail(n, "'eval.batch_size' must be at least 1");
  }
  if (auto n = root["spectrum"]) {
    r.require_map(n, "spectrum");
    r.allow_keys(n, "spectrum", {"checkpoint", "traces", "batches", "batch_size"});
    r.get(n, "spectrum", "checkpoint", c.spectrum.checkpoint);
    r.get(n, "spectrum", "traces", c.spectrum.traces);
    r.get(n, "spectrum", "batches", c.spectrum.batches);
    r.get(n, "spectrum", "batch_size", c.spectrum.batch_size);
    if (c.spectrum.batches == 0 || c.spectrum.batch_size == 0) r.fail(n, "'spectrum.batches' and 'spectrum.batch_size' must be positive");
  }
  if (auto n = root["energy"]) {
    r.require_map(n, "energy");
    r.allow_keys(n, "energy", {"checkpoint", "acs", "macs", "e_ac", "e_mac", "samples"});
    r.get(n, "energy", "checkpoint", c.energy.checkpoint);
    r.get(n, "energy", "acs", c.energy.acs);
    r.get(n, "energy", "macs", c.energy.macs);
    r.get(n, "energy", "e_ac", c.energy.e_ac);
    r.get(n, "energy", "e_mac", c.energy.e_mac);
    r.get(n, "energy", "samples", c.energy.samples);
    if (c.energy.acs.has_value() != c.energy.macs.has_value()) r.fail(n, "'energy.acs' and 'energy.macs' go together");
    if ((c.energy.acs && *c.energy.acs < 0.0) || (c.energy.macs && *c.energy.macs < 0.0)) {
      r.fail(n, "operation counts must be non-negative");
    }
    if (!(c.energy.e_ac > 0.0) || !(c.energy.e_mac > 0.0)) r.fail(n, "'energy.e_ac' and 'energy.e_mac' must be positive");
    if (c.energy.samples == 0) r.fail(n, "'energy.samples' must be at least 1");
  }
  if (auto n = root["compare"]) {
    r.require_map(n, "compare");
    r.allow_keys(n, "compare", {"base", "fsta"});
    r.get(n, "compare", "base", c.compare.base);
    r.get(n, "compare", "fsta", c.compare.fsta);
  }
  c.train.seed = c.seed;
  c.train.timesteps = c.network.timesteps;
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read configuration file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string serialize_config(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  if (!c.run_id.empty()) e << YAML::Key << "run_id" << YAML::Value << c.run_id;
  if (!c.output.empty()) e << YAML::Key << "output" << YAML::Value << c.output;

  const auto& n = c.network;
  e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "arch" << YAML::Value << n.arch;
  e << YAML::Key << "timesteps" << YAML::Value << n.timesteps;
  e << YAML::Key << "residual" << YAML::Value << (n.residual == ResidualMode::membrane ? "membrane" : "spike");
  e << YAML::Key << "neuron" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "tau" << YAML::Value << n.neuron.tau;
  e << YAML::Key << "v_th" << YAML::Value << n.neuron.v_th;
  e << YAML::Key << "v_reset" << YAML::Value << n.neuron.v_reset;
  e << YAML::Key << "surrogate" << YAML::Value << (n.neuron.surrogate == Surrogate::triangular ? "triangular" : "sigmoid");
  e << YAML::Key << "surrogate_width" << YAML::Value << n.neuron.surrogate_width;
  e << YAML::Key << "detach_reset" << YAML::Value << n.neuron.detach_reset;
  e << YAML::EndMap;
  if (n.arch == "custom") {
    e << YAML::Key << "layers" << YAML::Value << YAML::BeginSeq;
    for (const auto& l : n.layers) {
      e << YAML::Flow << YAML::BeginMap;
      e << YAML::Key << "kind" << YAML::Value << std::string(layer_kind_key(l.kind));
      e << YAML::Key << "channels" << YAML::Value << l.channels;
      e << YAML::Key << "kernel" << YAML::Value << l.kernel;
      e << YAML::Key << "stride" << YAML::Value << l.stride;
      e << YAML::EndMap;
    }
    e << YAML::EndSeq;
  }
  e << YAML::EndMap;

  const auto& f = c.fsta;
  e << YAML::Key << "fsta" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "enabled" << YAML::Value << f.enabled;
  e << YAML::Key << "kernel_size" << YAML::Value << f.config.kernel_size;
  e << YAML::Key << "mode" << YAML::Value << (f.config.mode == FusionMode::serial ? "serial" : "parallel");
  if (f.placement) e << YAML::Key << "placement" << YAML::Value << YAML::Flow << *f.placement;
  e << YAML::Key << "learnable_scales" << YAML::Value << f.config.learnable_scales;
  e << YAML::Key << "alpha" << YAML::Value << f.config.alpha;
  e << YAML::Key << "beta" << YAML::Value << f.config.beta;
  e << YAML::Key << "scale_t" << YAML::Value << f.config.scale_t;
  e << YAML::Key << "scale_s" << YAML::Value << f.config.scale_s;
  e << YAML::EndMap;

  const auto& t = c.train;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "epochs" << YAML::Value << t.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  e << YAML::Key << "lr" << YAML::Value << t.lr;
  e << YAML::Key << "optimizer" << YAML::Value << std::string(to_string(t.optimizer));
  e << YAML::Key << "momentum" << YAML::Value << t.momentum;
  e << YAML::Key << "beta1" << YAML::Value << t.beta1;
  e << YAML::Key << "beta2" << YAML::Value << t.beta2;
  e << YAML::Key << "adam_eps" << YAML::Value << t.adam_eps;
  e << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  e << YAML::Key << "loss" << YAML::Value << std::string(to_string(t.loss));
  e << YAML::Key << "cosine" << YAML::Value << t.cosine;
  e << YAML::Key << "augment" << YAML::Value << t.augment;
  e << YAML::Key << "grad_clip" << YAML::Value << t.grad_clip;
  e << YAML::EndMap;

  const auto& d = c.dataset;
  e << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << std::string(to_string(d.kind));
  auto str = [&](const char* key, const std::string& v) {
    if (!v.empty()) e << YAML::Key << key << YAML::Value << v;
  };
  str("path", d.path);
  str("train_images", d.train_images);
  str("train_labels", d.train_labels);
  str("test_images", d.test_images);
  str("test_labels", d.test_labels);
  e << YAML::Key << "classes" << YAML::Value << d.classes;
  e << YAML::Key << "samples" << YAML::Value << d.samples;
  e << YAML::Key << "test_samples" << YAML::Value << d.test_samples;
  e << YAML::Key << "channels" << YAML::Value << d.channels;
  e << YAML::Key << "height" << YAML::Value << d.height;
  e << YAML::Key << "width" << YAML::Value << d.width;
  e << YAML::Key << "period" << YAML::Value << d.period;
  e << YAML::Key << "orientation_mix" << YAML::Value << d.orientation_mix;
  e << YAML::Key << "noise" << YAML::Value << d.noise;
  e << YAML::Key << "blobs" << YAML::Value << d.blobs;
  e << YAML::Key << "fine_sigma" << YAML::Value << d.fine_sigma;
  e << YAML::Key << "coarse_sigma" << YAML::Value << d.coarse_sigma;
  e << YAML::Key << "seed" << YAML::Value << d.seed;
  if (!d.mean.empty()) {
    e << YAML::Key << "mean" << YAML::Value << YAML::Flow << d.mean;
    e << YAML::Key << "std" << YAML::Value << YAML::Flow << d.stddev;
  }
  e << YAML::EndMap;

  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  str("checkpoint", c.eval.checkpoint);
  e << YAML::Key << "batch_size" << YAML::Value << c.eval.batch_size;
  e << YAML::EndMap;

  e << YAML::Key << "spectrum" << YAML::Value << YAML::BeginMap;
  str("checkpoint", c.spectrum.checkpoint);
  if (!c.spectrum.traces.empty()) e << YAML::Key << "traces" << YAML::Value << c.spectrum.traces;
  e << YAML::Key << "batches" << YAML::Value << c.spectrum.batches;
  e << YAML::Key << "batch_size" << YAML::Value << c.spectrum.batch_size;
  e << YAML::EndMap;

  e << YAML::Key << "energy" << YAML::Value << YAML::BeginMap;
  str("checkpoint", c.energy.checkpoint);
  if (c.energy.acs) e << YAML::Key << "acs" << YAML::Value << *c.energy.acs;
  if (c.energy.macs) e << YAML::Key << "macs" << YAML::Value << *c.energy.macs;
  e << YAML::Key << "e_ac" << YAML::Value << c.energy.e_ac;
  e << YAML::Key << "e_mac" << YAML::Value << c.energy.e_mac;
  e << YAML::Key << "samples" << YAML::Value << c.energy.samples;
  e << YAML::EndMap;

  if (!c.compare.base.empty() || !c.compare.fsta.empty()) {
    e << YAML::Key << "compare" << YAML::Value << YAML::BeginMap;
    str("base", c.compare.base);
    str("fsta", c.compare.fsta);
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

void validate_for_command(const RunConfig& c, const std::string& command) {
  auto must_exist = [](const std::string& what, const std::string& path) {
    if (path.empty()) throw ConfigError("'" + what + "' is required for this command");
    if (!std::filesystem::exists(path)) throw ConfigError("'" + what + "' refers to missing path '" + path + "'");
  };
  auto may_exist = [&](const std::string& what, const std::string& path) {
    if (!path.empty()) must_exist(what, path);
  };
  const auto& d = c.dataset;
  const bool needs_data = command == "train" || command == "eval" ||
                          (command == "spectrum" && c.spectrum.traces.empty()) ||
                          (command == "energy" && !c.energy.acs);
  if (needs_data) {
    if (d.kind == DatasetKind::cifar10_binary) must_exist("dataset.path", d.path);
    if (d.kind == DatasetKind::tensor_container) {
      must_exist("dataset.train_images", d.train_images);
      must_exist("dataset.train_labels", d.train_labels);
      must_exist("dataset.test_images", d.test_images);
      must_exist("dataset.test_labels", d.test_labels);
    }
  }
  if (command == "eval") must_exist("eval.checkpoint", c.eval.checkpoint);
  if (command == "spectrum") {
    may_exist("spectrum.checkpoint", c.spectrum.checkpoint);
    for (const auto& t : c.spectrum.traces) must_exist("spectrum.traces", t);
  }
  if (command == "energy") may_exist("energy.checkpoint", c.energy.checkpoint);
  if (command == "compare") {
    must_exist("compare.base", c.compare.base);
    must_exist("compare.fsta", c.compare.fsta);
  }
  if (command == "gen-data" && d.kind != DatasetKind::synthetic_gratings && d.kind != DatasetKind::synthetic_twoclass &&
      d.kind != DatasetKind::cifar10_binary) {
    throw ConfigError("gen-data needs a synthetic dataset kind (or cifar10_binary to compute channel statistics)");
  }
  if (command == "gen-data" && d.kind == DatasetKind::cifar10_binary) must_exist("dataset.path", d.path);
}

NetworkSpec network_spec(const RunConfig& c, std::size_t in_channels, std::size_t height, std::size_t width,
                         std::size_t classes) {
  NetworkSpec spec;
  if (c.network.arch == "custom") {
    spec.name = "custom";
    spec.in_channels = in_channels;
    spec.in_height = height;
    spec.in_width = width;
    spec.timesteps = c.network.timesteps;
    spec.layers = c.network.layers;
    for (auto& l : spec.layers)
      if (l.kind == LayerKind::fsta) l.fsta = c.fsta.config;
  } else {
    spec = catalog_network(c.network.arch, in_channels, height, width, classes, c.network.timesteps);
  }
  spec.residual = c.network.residual;
  spec.neuron = c.network.neuron;
  if (c.fsta.enabled) {
    const auto placement = c.fsta.placement.value_or(default_fsta_placement(spec));
    spec = insert_fsta(spec, placement, c.fsta.config);
  }
  return spec;
}

namespace {

Dataset container_split(const std::string& images, const std::string& labels, std::size_t classes) {
  Tensor img = load_tensor_container(images);
  const Tensor lab = load_tensor_container(labels);
  if (img.rank() != 4) throw std::runtime_error(images + ": images must be [S,C,H,W], got " + to_string(img.shape()));
  if (lab.rank() != 1 || lab.dim(0) != img.dim(0)) {
    throw std::runtime_error(labels + ": labels must be [" + std::to_string(img.dim(0)) + "], got " +
                             to_string(lab.shape()));
  }
  std::vector<int> l(lab.numel());
  int top = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const double v = lab[i];
    if (v < 0.0 || v != std::floor(v)) throw std::runtime_error(labels + ": label " + std::to_string(v) + " is not a class index");
    l[i] = static_cast<int>(v);
    top = std::max(top, l[i]);
  }
  const std::size_t k = classes ? classes : static_cast<std::size_t>(top) + 1;
  if (static_cast<std::size_t>(top) >= k) {
    throw std::runtime_error(labels + ": label " + std::to_string(top) + " exceeds class count " + std::to_string(k));
  }
  return Dataset{std::move(img), std::move(l), k};
}

}  // namespace

DatasetSplit load_dataset(const DatasetDescriptor& d) {
  DatasetSplit s;
  switch (d.kind) {
    case DatasetKind::synthetic_twoclass: {
      TwoClassParams p{d.samples, d.channels, d.height, d.width, d.blobs, d.fine_sigma, d.coarse_sigma, d.noise, d.seed};
      s.train = synthetic_twoclass(p);
      p.samples = d.test_samples;
      p.seed = d.seed + 1;
      s.test = synthetic_twoclass(p);
      break;
    }
    case DatasetKind::synthetic_gratings: {
      GratingParams p{d.samples, d.height, d.width, d.period, d.orientation_mix, d.noise, d.seed};
      s.train = synthetic_gratings(p);
      p.samples = d.test_samples;
      p.seed = d.seed + 1;
      s.test = synthetic_gratings(p);
      break;
    }
    case DatasetKind::cifar10_binary: {
      s.train = load_cifar10_binary(d.path, Split::train);
      s.test = load_cifar10_binary(d.path, Split::test);
      const ChannelStats st = d.mean.empty() ? channel_stats(s.train) : ChannelStats{d.mean, d.stddev};
      s.train = normalize(s.train, st);
      s.test = normalize(s.test, st);
      return s;
    }
    case DatasetKind::tensor_container:
      s.train = container_split(d.train_images, d.train_labels, d.classes);
      s.test = container_split(d.test_images, d.test_labels, d.classes ? d.classes : s.train.classes);
      s.test.classes = s.train.classes = std::max(s.train.classes, s.test.classes);
      break;
  }
  if (!d.mean.empty()) {
    const ChannelStats st{d.mean, d.stddev};
    s.train = normalize(s.train, st);
    s.test = normalize(s.test, st);
  }
  return s;
}

}  // namespace fsta::cli
