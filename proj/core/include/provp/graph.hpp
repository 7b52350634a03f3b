#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "provp/tensor.hpp"

namespace provp {

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  add_row,
  gelu,
  layernorm,
  softmax,
  log_softmax,
  log,
  l2_normalize,
  concat,
  slice,
  sum,
  attention,
  custom,
};

std::string_view op_name(OpKind kind);

using NodeId = std::size_t;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  explicit operator bool() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so insertion order is a
/// topological order and backward() walks it in reverse. A node takes part in
/// differentiation iff it is a trainable leaf or one of its inputs does;
/// constants never receive an adjoint. Single-threaded by construction.
class Graph {
 public:
  /// Called once per node during backward. Reads output_grad(self) and adds
  /// into grad_sink(input) for each input that accepts a gradient.
  using BackwardFn = std::function<void(Graph&, NodeId self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf holding its own copy of `value`; never differentiated.
  Var constant(Tensor value);
  /// Leaf borrowing `value`, which must outlive the graph; never differentiated.
  Var constant_ref(const Tensor& value);
  /// Leaf borrowing `value` that collects a gradient when the graph has
  /// gradients enabled and value.requires_grad() is set.
  Var parameter(const Tensor& value);
  /// Owned leaf that always collects a gradient (when enabled).
  Var variable(Tensor value);

  /// Extension point used by every op: appends a node whose value has
  /// already been computed. `backward` may be empty for ops without inputs
  /// that need gradients.
  Var record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  /// Previous adjoints are discarded first.
  void backward(Var loss);

  const Tensor& value(NodeId id) const;
  /// Handle for an existing node.
  Var var(NodeId id);
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }

  /// Adjoint of a node, as seen from inside its BackwardFn.
  std::span<const double> output_grad(NodeId id) const;
  /// Accumulator for an input's adjoint, or an empty span when that input
  /// does not take part in differentiation.
  std::span<double> grad_sink(NodeId id);

  /// d(loss)/d(v) after backward(); all zeros for nodes the loss does not reach.
  Tensor grad(Var v) const;
  /// True iff an adjoint buffer was ever materialized for v.
  bool has_gradient(Var v) const { return !nodes_.at(v.id()).adjoint.empty(); }

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Nodes whose BackwardFn ran during the last backward().
  std::size_t backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<NodeId> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool needs_grad = false;
    Buffer adjoint;
    BackwardFn backward;
  };

  Var push(Node node);

  // deque keeps node addresses stable so references from value() survive appends.
  std::deque<Node> nodes_;
  bool grad_enabled_;
  std::size_t backward_visits_ = 0;
};

}  // namespace provp
