#include "fsta_cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fsta/data.hpp"

namespace fsta::cli {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void raw(std::span<const std::uint8_t> b) {
    u64(b.size());
    bytes.insert(bytes.end(), b.begin(), b.end());
  }
  std::vector<std::uint8_t> bytes;

 private:
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, std::string source) : b_(b), source_(std::move(source)) {}
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> raw() {
    const std::uint64_t n = u64();
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw std::runtime_error(source_ + ": checkpoint is truncated");
  }

 private:
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  std::string source_;
};

void header(Reader& r, const std::string& source, std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "FSCK", 4) != 0) {
    throw std::runtime_error(source + ": not a checkpoint (bad magic)");
  }
  r.u32();  // magic
  const std::uint32_t v = r.u32();
  if (v != kCheckpointVersion) throw std::runtime_error(source + ": unsupported checkpoint version " + std::to_string(v));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network& net, const TrainState& state,
                     const std::string& config_yaml) {
  Writer w;
  w.bytes = {'F', 'S', 'C', 'K'};
  w.u32(kCheckpointVersion);
  w.str(config_yaml);
  w.u64(state.epoch);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  const ParameterList params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) {
    w.str(p->name);
    w.raw(encode_tensor(p->value, DType::f64));
  }
  const auto bns = net.batch_norms();
  w.u32(static_cast<std::uint32_t>(bns.size()));
  for (auto* bn : bns) {
    w.str(bn->scale.name);
    w.u32(static_cast<std::uint32_t>(bn->channels()));
    for (double v : bn->running_mean) w.f64(v);
    for (double v : bn->running_var) w.f64(v);
  }
  w.u64(state.optimizer.step);
  w.u32(static_cast<std::uint32_t>(state.optimizer.first.size()));
  for (std::size_t i = 0; i < state.optimizer.first.size(); ++i) {
    w.u64(state.optimizer.first[i].size());
    for (double v : state.optimizer.first[i]) w.f64(v);
    const auto& s = i < state.optimizer.second.size() ? state.optimizer.second[i] : std::vector<double>{};
    w.u64(s.size());
    for (double v : s) w.f64(v);
  }
  write_file(path, w.bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Network* net) {
  const auto bytes = read_file(path);
  const std::string source = path.string();
  Reader r(bytes, source);
  header(r, source, bytes);
  Checkpoint ck;
  ck.config_yaml = r.str();
  ck.epoch = r.u64();
  ck.rng_state = r.str();

  std::map<std::string, Parameter*> by_name;
  std::map<std::string, BatchNormState*> bn_by_name;
  if (net) {
    for (auto* p : net->parameters()) by_name[p->name] = p;
    for (auto* bn : net->batch_norms()) bn_by_name[bn->scale.name] = bn;
  }
  const std::uint32_t np = r.u32();
  if (net && np != by_name.size()) {
    throw std::runtime_error(source + ": checkpoint holds " + std::to_string(np) + " parameters, network has " +
                             std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < np; ++i) {
    const std::string name = r.str();
    const Tensor t = decode_tensor(r.raw());
    if (!net) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error(source + ": unknown parameter '" + name + "'");
    Parameter& p = *it->second;
    if (t.shape() != p.value.shape()) {
      throw std::runtime_error(source + ": parameter '" + name + "' has shape " + to_string(t.shape()) +
                               ", network expects " + to_string(p.value.shape()));
    }
    p.value = t.detach(p.trainable);
  }
  const std::uint32_t nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    const std::string name = r.str();
    const std::uint32_t c = r.u32();
    std::vector<double> mean(c), var(c);
    for (auto& v : mean) v = r.f64();
    for (auto& v : var) v = r.f64();
    if (!net) continue;
    auto it = bn_by_name.find(name);
    if (it == bn_by_name.end() || it->second->channels() != c) {
      throw std::runtime_error(source + ": batch-norm statistics '" + name + "' do not match the network");
    }
    it->second->running_mean = std::move(mean);
    it->second->running_var = std::move(var);
  }
  ck.optimizer.step = r.u64();
  const std::uint32_t slots = r.u32();
  ck.optimizer.first.resize(slots);
  ck.optimizer.second.resize(slots);
  for (std::uint32_t i = 0; i < slots; ++i) {
    ck.optimizer.first[i].resize(r.u64());
    for (auto& v : ck.optimizer.first[i]) v = r.f64();
    ck.optimizer.second[i].resize(r.u64());
    for (auto& v : ck.optimizer.second[i]) v = r.f64();
  }
  return ck;
}

std::string checkpoint_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  header(r, path.string(), bytes);
  return r.str();
}

void restore_train_state(const Checkpoint& ck, TrainState& state) {
  state.epoch = ck.epoch;
  state.optimizer = ck.optimizer;
  std::istringstream in(ck.rng_state);
  in >> state.rng;
  if (!in) throw std::runtime_error("checkpoint: corrupt RNG state");
}

}  // namespace fsta::cli
