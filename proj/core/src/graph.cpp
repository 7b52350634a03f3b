#include "provp/graph.hpp"

#include <algorithm>

#include "provp/error.hpp"

namespace provp {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::add_row: return "add_row";
    case OpKind::gelu: return "gelu";
    case OpKind::layernorm: return "layernorm";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::log: return "log";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::sum: return "sum";
    case OpKind::attention: return "attention";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.kind = OpKind::constant;
  n.borrowed = &value;
  return push(std::move(n));
}

Var Graph::parameter(const Tensor& value) {
  Node n;
  n.kind = OpKind::parameter;
  n.borrowed = &value;
  n.needs_grad = grad_enabled_ && value.requires_grad();
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.kind = OpKind::parameter;
  n.owned = std::move(value);
  n.needs_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::record(OpKind kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.graph_ != this) throw InvariantError("op input belongs to a different graph");
    n.inputs.push_back(v.id_);
    n.needs_grad = n.needs_grad || nodes_[v.id_].needs_grad;
  }
  n.needs_grad = n.needs_grad && grad_enabled_;
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

std::span<const double> Graph::output_grad(NodeId id) const { return nodes_.at(id).adjoint; }

std::span<double> Graph::grad_sink(NodeId id) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return {};
  if (n.adjoint.empty()) n.adjoint.assign(value(id).size(), 0.0);
  return n.adjoint;
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw InvariantError("backward on a variable of another graph");
  if (value(loss.id_).size() != 1) {
    throw DimensionError("backward needs a single-element loss, got shape " +
                         to_string(value(loss.id_).shape()));
  }
  for (auto& n : nodes_) n.adjoint.clear();
  backward_visits_ = 0;
  if (!nodes_[loss.id_].needs_grad) return;

  grad_sink(loss.id_)[0] = 1.0;
  for (NodeId id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.adjoint.empty() || !n.backward) continue;
    n.backward(*this, id);
    ++backward_visits_;
  }
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  const Tensor& val = value(v.id());
  if (n.adjoint.empty()) return Tensor(val.shape(), 0.0);
  Tensor out(val.shape());
  std::copy(n.adjoint.begin(), n.adjoint.end(), out.values().begin());
  return out;
}

Var Graph::var(NodeId id) {
  if (id >= nodes_.size()) throw InvariantError("node " + std::to_string(id) + " does not exist");
  return Var(this, id);
}

}  // namespace provp
