#pragma once

// Dense reverse-mode differentiation.
//
// A Tensor is a handle to a graph node. Every primitive that consumes a
// tensor requiring gradients records its inputs and a backward rule on the
// node it produces. Nodes carry a monotonically increasing sequence number,
// so sorting the reachable nodes by it yields a topological order; this
// ordered list is the computation record replayed by backward().
//
// Gradient semantics: leaf gradients accumulate across backward() calls
// until zero_grad() is called. Intermediate gradients are reset at the start
// of every backward() call, so invoking backward() twice on the same graph
// sums exactly twice the gradient into each leaf.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rspgrid::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

namespace detail {

inline std::uint64_t& sequence_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  Node() : seq(detail::sequence_counter()++) {}

  // Long unrolled chains would otherwise recurse once per node on teardown.
  ~Node() {
    std::vector<std::shared_ptr<Node>> stack = std::move(inputs);
    while (!stack.empty()) {
      std::shared_ptr<Node> n = std::move(stack.back());
      stack.pop_back();
      if (n && n.use_count() == 1) {
        for (auto& in : n->inputs) stack.push_back(std::move(in));
        n->inputs.clear();
      }
    }
  }

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = ag::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const auto n = ag::numel(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (ag::numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(ag::numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Mutating values of a graph interior invalidates recorded backward rules;
  // use only on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    if (!node_->is_leaf) throw std::logic_error("set_requires_grad: only leaves may change the flag");
    node_->requires_grad = rg;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return std::span<T>(node_->grad_data(), numel()); }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return from(shape(), node_->value, false); }
  Tensor clone() const { return from(shape(), node_->value, requires_grad()); }

  const NodePtr<T>& node() const { return node_; }
  const char* op() const { return node_->op; }

 private:
  NodePtr<T> node_;
};

// Creates the result of a primitive. The backward rule and inputs are kept
// only when graph recording is on and at least one input requires grad.
template <typename T, typename Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->inputs.reserve(inputs.size());
    for (const auto* in : inputs) node->inputs.push_back(in->node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result_v(const char* op, Shape shape, std::vector<T> value,
                        const std::vector<Tensor<T>>& inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

// Ordered list of every gradient-carrying node reachable from `output`,
// inputs before consumers.
template <typename T>
std::vector<NodePtr<T>> computation_record(const Tensor<T>& output) {
  std::vector<NodePtr<T>> nodes;
  if (!output.defined() || !output.requires_grad()) return nodes;
  std::vector<Node<T>*> stack{output.node().get()};
  std::unordered_set<const Node<T>*> seen{output.node().get()};
  nodes.push_back(output.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (!in->requires_grad || !seen.insert(in.get()).second) continue;
      nodes.push_back(in);
      stack.push_back(in.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->seq < b->seq; });
  return nodes;
}

template <typename T>
void backward(const Tensor<T>& output, const Tensor<T>& seed) {
  if (seed.shape() != output.shape()) shape_mismatch("backward(seed)", output.shape(), seed.shape());
  if (!output.requires_grad()) return;
  auto record = computation_record(output);
  for (auto& n : record) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
  }
  T* g = output.node()->grad_data();
  const auto s = seed.data();
  for (std::size_t i = 0; i < s.size(); ++i) g[i] += s[i];
  for (auto it = record.rbegin(); it != record.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.is_leaf && n.backward) n.backward(n);
  }
}

// Backward with unit seed; `output` must hold a single value.
template <typename T>
void backward(const Tensor<T>& output) {
  backward(output, Tensor<T>::full(output.shape(), T(1)));
}

}  // namespace rspgrid::ag
