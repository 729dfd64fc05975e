#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable node. Operations never mutate
// their operands; each produces a fresh node that remembers its inputs and a
// backward rule whenever at least one input requires a gradient. backward()
// linearizes the graph reachable from a scalar root into a Tape (topological
// order) and replays it in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fsta {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

using GradBuffer = std::vector<double>;

// grad_in[i] is null when input i does not require a gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<GradBuffer* const> grad_in)>;

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::string_view kind = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                       bool requires_grad = false);

  // Result constructor used by operations. Inputs and the backward rule are
  // only retained when gradient recording is enabled and some input needs it.
  static Tensor from_op(Shape shape, std::vector<double> values, std::string_view kind,
                        std::vector<Tensor> inputs, detail::BackwardFn backward);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  std::string_view op() const { return node_->kind; }

  // Same values, no history, a new identity.
  Tensor detach(bool requires_grad = false) const;

  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

class Tape;
class Gradients;

struct TapeRecord {
  std::string_view kind;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output = 0;
};

// Topologically ordered record of every operation reachable from a root.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::span<const TapeRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const Tensor& root() const { return root_; }

 private:
  friend class Gradients;
  friend Gradients backward(const Tensor& root, const Tape& tape);
  Tensor root_;
  std::vector<detail::NodePtr> order_;
  std::vector<TapeRecord> records_;
};

class Gradients {
 public:
  bool has(const Tensor& t) const { return grads_.contains(t.id()); }
  std::span<const double> values(const Tensor& t) const;
  Tensor of(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& root, const Tape& tape);
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
  std::unordered_map<std::uint64_t, Shape> shapes_;
};

// Gradients for every requires_grad leaf reachable from `root`, plus the root
// itself (whose gradient is 1). Throws std::invalid_argument if root is not a
// scalar.
Gradients backward(const Tensor& root);
Gradients backward(const Tensor& root, const Tape& tape);

}  // namespace fsta
