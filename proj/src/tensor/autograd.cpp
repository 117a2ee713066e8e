#include "evreg/tensor/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace evreg {

NdArray& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = NdArray(value.shape());
  return grad;
}

Var::Var(NdArray value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NdArray Var::grad() const {
  if (!node_) throw Error("Var: undefined");
  if (node_->grad.empty()) return NdArray(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = NdArray();
}

namespace {
thread_local bool grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_enabled = previous_; }

Var constant(NdArray value) { return Var(std::move(value), false); }
Var parameter(NdArray value) { return Var(std::move(value), true); }

Var record(NdArray value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (any && grad_enabled) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (Var& v : inputs) node->inputs.push_back(v.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void accumulate_grad(Node& node, const NdArray& g) {
  if (!node.requires_grad) return;
  node.grad_buffer() += g;
}

Tape::Tape(const Var& root) : root_(root.node()) {
  if (!root_) throw Error("Tape: undefined root");
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Tape::backward() {
  if (!root_->requires_grad) return;
  root_->grad_buffer().fill(1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      n->backward_fn(*n);
      // Interior gradients are consumed exactly once; leaves keep theirs.
      n->grad = NdArray();
    }
  }
}

void backward(const Var& loss) { Tape(loss).backward(); }

}  // namespace evreg
