#include "fsta_cli/commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "fsta/analysis.hpp"
#include "fsta/data.hpp"
#include "fsta/train.hpp"
#include "fsta_cli/checkpoint.hpp"

namespace fsta::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kCommands{"train", "eval", "spectrum", "energy", "compare", "gen-data"};

std::string usage() {
  return "usage: fsta <command> <config.yaml> [--seed N] [--out DIR]\n"
         "commands: train, eval, spectrum, energy, compare, gen-data\n"
         "environment: " +
         std::string(kReportRootEnv) + " selects the report root (default ./reports)\n";
}

Network build_for(const RunConfig& cfg, const Dataset& data) {
  const Shape& s = data.images.shape();
  return Network::build(network_spec(cfg, s[1], s[2], s[3], data.classes), cfg.seed);
}

// Network described by a checkpoint's own config, with its weights restored.
Network network_from_checkpoint(const std::string& path, const Dataset& data) {
  const RunConfig saved = parse_config_text(checkpoint_config(path), path + " (embedded config)");
  Network net = build_for(saved, data);
  load_checkpoint(path, &net);
  return net;
}

Network network_for(const RunConfig& cfg, const std::string& checkpoint, const Dataset& data) {
  return checkpoint.empty() ? build_for(cfg, data) : network_from_checkpoint(checkpoint, data);
}

Dataset head(const Dataset& d, std::size_t n, std::size_t offset = 0) {
  n = std::min(n, d.size() - std::min(offset, d.size()));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), offset);
  return d.gather(idx);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,lr,train_loss,train_accuracy,train_firing_rate,test_loss,test_accuracy,test_firing_rate,seconds\n";
  for (const auto& r : history) {
    out << r.epoch << "," << fmt(r.lr) << "," << fmt(r.train.loss) << "," << fmt(r.train.accuracy) << ","
        << fmt(r.train.firing_rate) << "," << fmt(r.test.loss) << "," << fmt(r.test.accuracy) << ","
        << fmt(r.test.firing_rate) << "," << fmt(r.train.seconds + r.test.seconds) << "\n";
  }
}

int cmd_train(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  const DatasetSplit data = load_dataset(cfg.dataset);
  Network net = build_for(cfg, data.train);
  TrainState state(cfg.seed);
  const auto history = fit(net, data.train, data.test, cfg.train, state);
  FiringStats firing;
  const Metrics final_test = evaluate(net, data.test, std::max<std::size_t>(cfg.train.batch_size, 64), &firing);

  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", history);
  write_firing_csv(dir / "firing.csv", firing);
  save_checkpoint(dir / "checkpoint.bin", net, state, serialize_config(cfg));
  artifacts = {dir / "metrics.csv", dir / "firing.csv", dir / "checkpoint.bin"};
  std::printf("trained %zu epochs: test accuracy %.4f, loss %.4f, firing rate %.5f, %zu parameters\n",
              history.size(), final_test.accuracy, final_test.loss, final_test.firing_rate, net.parameter_count());
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  const DatasetSplit data = load_dataset(cfg.dataset);
  Network net = network_from_checkpoint(cfg.eval.checkpoint, data.test);
  FiringStats firing;
  const Metrics m = evaluate(net, data.test, cfg.eval.batch_size, &firing);
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", {EpochRecord{0, 0.0, Metrics{}, m}});
  write_firing_csv(dir / "firing.csv", firing);
  artifacts = {dir / "metrics.csv", dir / "firing.csv"};
  std::printf("accuracy %.4f  loss %.4f  firing rate %.5f  (%zu samples)\n", m.accuracy, m.loss, m.firing_rate, m.samples);
  for (const auto& l : firing.layers) std::printf("  %-12s %.5f\n", l.name.c_str(), l.rate);
  return kExitOk;
}

ForwardTrace trace_from_containers(const std::vector<std::string>& paths) {
  ForwardTrace tr;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Tensor t = load_tensor_container(paths[i]);
    if (t.rank() == 4) t = Tensor({t.dim(0), 1, t.dim(1), t.dim(2), t.dim(3)}, {t.values().begin(), t.values().end()});
    if (t.rank() != 5) {
      throw std::invalid_argument(paths[i] + ": spike trace must be [T,N,C,H,W] or [T,C,H,W], got " + to_string(t.shape()));
    }
    for (double v : t.values())
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(paths[i] + ": trace values must lie in [0,1]");
    if (i == 0) {
      tr.timesteps = t.dim(0);
      tr.batch = t.dim(1);
    }
    tr.spikes.push_back(SpikeRecord{fs::path(paths[i]).stem().string(), i, std::move(t)});
  }
  return tr;
}

int cmd_spectrum(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  std::vector<ForwardTrace> traces;
  std::string arch = "trace";
  std::string dataset = "trace";
  if (!cfg.spectrum.traces.empty()) {
    traces.push_back(trace_from_containers(cfg.spectrum.traces));
  } else {
    const DatasetSplit data = load_dataset(cfg.dataset);
    Network net = network_for(cfg, cfg.spectrum.checkpoint, data.test);
    arch = net.spec().name;
    dataset = std::string(to_string(cfg.dataset.kind));
    NoGradGuard guard;
    for (std::size_t b = 0; b < cfg.spectrum.batches; ++b) {
      const std::size_t offset = b * cfg.spectrum.batch_size;
      if (offset >= data.test.size()) break;
      const Dataset batch = head(data.test, cfg.spectrum.batch_size, offset);
      if (!traces.empty() && batch.size() != traces.front().batch) break;  // keep shapes uniform
      traces.push_back(*net.forward(batch.images, false, true).trace);
    }
  }
  SpectrumReport rep = spectrum_report(traces);
  rep.architecture = arch;
  rep.dataset = dataset;
  artifacts = write_spectrum_report(dir / "spectrum", rep);
  std::printf("spectrum: %zu (layer, timestep) maps written to %s\n", rep.entries.size(), (dir / "spectrum").c_str());
  for (const auto& e : rep.entries) {
    std::printf("  layer%zu %-12s t%zu  horizontal(0) %.4f  vertical(0) %.4f\n", e.layer_index, e.layer.c_str(),
                e.timestep, e.horizontal[0], e.vertical[0]);
  }
  return kExitOk;
}

int cmd_energy(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  OpCounts counts;
  if (cfg.energy.acs) {
    counts.acs = *cfg.energy.acs;
    counts.macs = *cfg.energy.macs;
  } else {
    const DatasetSplit data = load_dataset(cfg.dataset);
    Network net = network_for(cfg, cfg.energy.checkpoint, data.test);
    NoGradGuard guard;
    const Dataset batch = head(data.test, cfg.energy.samples);
    const ForwardResult out = net.forward(batch.images, false, true);
    counts = count_ops(net, *out.trace);
  }
  const EnergyModel model{cfg.energy.e_ac, cfg.energy.e_mac};
  const double joules = energy(counts, model);
  fs::create_directories(dir);
  write_energy_csv(dir / "energy.csv", counts, model);
  artifacts = {dir / "energy.csv"};
  std::printf("ACs     %.6g\nMACs    %.6g\n", counts.acs, counts.macs);
  if (counts.params) std::printf("params  %zu (+%zu fixed DCT)\n", counts.params, counts.frozen_params);
  std::printf("Energy  %s\n", format_mj(joules).c_str());
  return kExitOk;
}

int cmd_compare(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  const FiringStats base = read_firing_csv(cfg.compare.base);
  const FiringStats fsta = read_firing_csv(cfg.compare.fsta);
  const ReductionReport rep = compare_runs(base, fsta);
  fs::create_directories(dir);
  write_reduction_csv(dir / "reduction.csv", rep);
  artifacts = {dir / "reduction.csv"};
  auto show = [](const Reduction& r) {
    if (r.reduction) {
      std::printf("  %-12s %.5f -> %.5f  %+.2f%%\n", r.name.c_str(), r.base, r.fsta, 100.0 * *r.reduction);
    } else {
      std::printf("  %-12s %.5f -> %.5f  n/a\n", r.name.c_str(), r.base, r.fsta);
    }
  };
  std::printf("firing-rate reduction (base -> fsta):\n");
  for (const auto& r : rep.layers) show(r);
  show(rep.network);
  return kExitOk;
}

int cmd_gen_data(const RunConfig& cfg, const fs::path& dir, std::vector<fs::path>& artifacts) {
  fs::create_directories(dir);
  if (cfg.dataset.kind == DatasetKind::cifar10_binary) {
    const Dataset train = load_cifar10_binary(cfg.dataset.path, Split::train);
    const ChannelStats st = channel_stats(train);
    std::ofstream out(dir / "normalization.csv");
    out << "channel,mean,std\n";
    for (std::size_t c = 0; c < st.mean.size(); ++c) out << c << "," << fmt(st.mean[c]) << "," << fmt(st.stddev[c]) << "\n";
    out.close();
    artifacts = {dir / "normalization.csv"};
    std::printf("dataset:\n  mean: [%s, %s, %s]\n  std: [%s, %s, %s]\n", fmt(st.mean[0]).c_str(), fmt(st.mean[1]).c_str(),
                fmt(st.mean[2]).c_str(), fmt(st.stddev[0]).c_str(), fmt(st.stddev[1]).c_str(), fmt(st.stddev[2]).c_str());
    return kExitOk;
  }
  const DatasetSplit data = load_dataset(cfg.dataset);
  auto labels = [](const Dataset& d) {
    return Tensor({d.size()}, std::vector<double>(d.labels.begin(), d.labels.end()));
  };
  save_tensor_container(dir / "train_images.fsta", data.train.images, DType::f64);
  save_tensor_container(dir / "train_labels.fsta", labels(data.train), DType::u8);
  save_tensor_container(dir / "test_images.fsta", data.test.images, DType::f64);
  save_tensor_container(dir / "test_labels.fsta", labels(data.test), DType::u8);
  artifacts = {dir / "train_images.fsta", dir / "train_labels.fsta", dir / "test_images.fsta", dir / "test_labels.fsta"};
  std::printf("wrote %zu train and %zu test samples of shape %s to %s\n", data.train.size(), data.test.size(),
              to_string(Shape(data.train.images.shape().begin() + 1, data.train.images.shape().end())).c_str(),
              dir.c_str());
  return kExitOk;
}

}  // namespace

fs::path run_directory(const std::string& command, const RunConfig& config, const Overrides& o) {
  if (o.out) return *o.out;
  if (!config.output.empty()) return config.output;
  const char* env = std::getenv(kReportRootEnv);
  const fs::path root = env && *env ? fs::path(env) : fs::path("reports");
  const std::string id = config.run_id.empty() ? command + "-s" + std::to_string(config.seed) : config.run_id;
  return root / id;
}

std::string sha256_hex(const fs::path& file) {
  const auto bytes = read_file(file);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed for '" + file.string() + "'");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config,
                    const std::vector<fs::path>& artifacts) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = config.seed;
  j["config"] = serialize_config(config);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& a : artifacts) {
    files.push_back({{"path", fs::relative(a, dir).generic_string()}, {"sha256", sha256_hex(a)}});
  }
  j["artifacts"] = files;
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  out << j.dump(2) << "\n";
}

int run_command(const std::string& command, RunConfig config, const Overrides& overrides) {
  try {
    if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
      std::cerr << "fsta: unknown command '" << command << "'\n" << usage();
      return kExitValidation;
    }
    if (overrides.seed) {
      config.seed = *overrides.seed;
      config.train.seed = *overrides.seed;
    }
    validate_for_command(config, command);
    const fs::path dir = run_directory(command, config, overrides);
    std::vector<fs::path> artifacts;
    int rc = kExitOk;
    if (command == "train") rc = cmd_train(config, dir, artifacts);
    else if (command == "eval") rc = cmd_eval(config, dir, artifacts);
    else if (command == "spectrum") rc = cmd_spectrum(config, dir, artifacts);
    else if (command == "energy") rc = cmd_energy(config, dir, artifacts);
    else if (command == "compare") rc = cmd_compare(config, dir, artifacts);
    else rc = cmd_gen_data(config, dir, artifacts);
    write_manifest(dir, command, config, artifacts);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << "fsta: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "fsta: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "fsta: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Frequency-based spatial-temporal attention for spiking networks"};
  std::string command, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  app.add_option("command", command, "train | eval | spectrum | energy | compare | gen-data")->required();
  app.add_option("config", config_path, "YAML run configuration")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out, "override the run directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help() << usage();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "fsta: " << e.what() << "\n" << usage();
    return kExitValidation;
  }
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    std::cerr << "fsta: unknown command '" << command << "'\n" << usage();
    return kExitValidation;
  }
  RunConfig config;
  try {
    config = parse_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "fsta: " << e.what() << "\n";
    return kExitValidation;
  }
  return run_command(command, std::move(config), Overrides{seed, out});
}

}  // namespace fsta::cli
