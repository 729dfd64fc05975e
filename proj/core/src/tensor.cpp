#include "fsta/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace fsta {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

detail::NodePtr make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " elements but " +
                     std::to_string(values.size()) + " were given");
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(make_node({}, {0.0}, false)) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(make_node(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = fsta::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(fsta::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> v(fsta::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::string_view kind,
                       std::vector<Tensor> inputs, detail::BackwardFn backward) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    needs_grad = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return t.requires_grad(); });
  }
  auto node = make_node(std::move(shape), std::move(values), needs_grad);
  node->kind = kind;
  if (needs_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("tensor: index rank mismatch for " + to_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("tensor: index out of range for " + to_string(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("tensor: item() on non-scalar shape " + to_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root;
  // Iterative post-order DFS; recursion depth would otherwise scale with T.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::NodePtr, std::size_t>> stack;
  if (root.requires_grad()) stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && !visited.insert(node.get()).second) {
      stack.pop_back();
      continue;
    }
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (child->requires_grad && !visited.contains(child.get())) stack.emplace_back(child, 0);
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  tape.records_.reserve(tape.order_.size());
  for (const auto& node : tape.order_) {
    TapeRecord rec;
    rec.kind = node->kind;
    rec.output = node->id;
    for (const auto& in : node->inputs) rec.inputs.push_back(in->id);
    tape.records_.push_back(std::move(rec));
  }
  return tape;
}

std::span<const double> Gradients::values(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) throw std::out_of_range("gradients: no gradient recorded for tensor");
  return it->second;
}

Tensor Gradients::of(const Tensor& t) const {
  auto v = values(t);
  return Tensor(shapes_.at(t.id()), std::vector<double>(v.begin(), v.end()));
}

Gradients backward(const Tensor& root) { return backward(root, Tape::record(root)); }

Gradients backward(const Tensor& root, const Tape& tape) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " + to_string(root.shape()));
  }
  if (tape.root_.id() != root.id()) throw std::invalid_argument("backward: tape was recorded for another root");

  Gradients result;
  result.grads_[root.id()] = {1.0};
  result.shapes_[root.id()] = root.shape();
  if (!root.requires_grad()) return result;

  std::unordered_map<const detail::Node*, detail::GradBuffer> pending;
  pending[root.node().get()] = {1.0};

  for (auto it = tape.order_.rbegin(); it != tape.order_.rend(); ++it) {
    const auto& node = *it;
    auto found = pending.find(node.get());
    if (found == pending.end()) continue;
    detail::GradBuffer grad = std::move(found->second);
    pending.erase(found);

    if (node->inputs.empty()) {
      result.grads_[node->id] = std::move(grad);
      result.shapes_[node->id] = node->shape;
      continue;
    }
    std::vector<detail::GradBuffer*> slots(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (!in->requires_grad) continue;
      auto& buf = pending[in.get()];
      if (buf.empty()) buf.assign(in->value.size(), 0.0);
      slots[i] = &buf;
    }
    node->backward(grad, slots);
  }
  return result;
}

}  // namespace fsta
