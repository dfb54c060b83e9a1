#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops build new nodes whose
// backward closure scatters the node's gradient into its inputs. Graph
// construction is skipped entirely while a NoGradGuard is alive or when no
// input requires a gradient, so evaluation-only passes keep no history.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vq3d/tensor.hpp"

namespace vq3d::ag {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  T item() const { return node_->value.item(); }

  /// Accumulated gradient; empty when backward never reached this node.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Var detach() const { return Var(node_->value, false); }

  /// Backpropagates from this scalar.
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an op. The backward closure is attached only
/// when gradients are being recorded and at least one input needs them.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  Var<T> out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

template <typename T>
void Var<T>::backward() const {
  if (!node_ || !node_->requires_grad) return;
  if (node_->value.size() != 1) throw std::logic_error("backward() requires a scalar output");

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

/// Adds g into the gradient of input `i` of `node` if that input tracks grads.
template <typename T>
Tensor<T>* input_grad(Node<T>& node, size_t i) {
  auto& in = node.inputs.at(i);
  if (!in->requires_grad) return nullptr;
  return &in->grad_buffer();
}

}  // namespace vq3d::ag
