#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "evreg/tensor/ndarray.hpp"

namespace evreg {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value in the computation graph. `backward_fn` reads this
/// node's gradient and accumulates into the gradients of `inputs`.
struct Node {
  NdArray value;
  NdArray grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, allocated as zeros on first use.
  NdArray& grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NdArray value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const NdArray& value() const { return node_->value; }
  /// Mutable access for optimizers and test hooks; never call on a node
  /// that already has dependents in a live graph.
  NdArray& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient after backward; zeros when nothing flowed into this node.
  NdArray grad() const;
  void zero_grad();

  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

Var constant(NdArray value);
Var parameter(NdArray value);

/// Creates the result node of a recorded op. When no input requires a
/// gradient the result is a plain constant and `fn` is dropped.
Var record(NdArray value, std::vector<Var> inputs, std::function<void(Node&)> fn);

/// While alive on a thread, record() on that thread keeps no graph: results
/// are constants. Used for evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Adds `g` into the gradient of `node` if it requires one.
void accumulate_grad(Node& node, const NdArray& g);

/// Topologically ordered view of the graph reachable from a root.
class Tape {
 public:
  explicit Tape(const Var& root);

  /// Seeds the root gradient with ones (the root is usually a scalar loss)
  /// and runs every recorded backward function once, in reverse order.
  void backward();

  std::size_t size() const noexcept { return order_.size(); }
  const std::vector<Node*>& order() const noexcept { return order_; }

 private:
  NodePtr root_;
  std::vector<Node*> order_;
};

/// Convenience: Tape(loss).backward().
void backward(const Var& loss);

}  // namespace evreg
