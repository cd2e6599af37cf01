#include "sd2/autodiff.hpp"

#include "sd2/errors.hpp"

#include <string>

namespace sd2::ad {

const Tensor& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("scalar() on a " + std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()) + " node");
  }
  return v(0, 0);
}

Var Graph::constant(Tensor value) {
  if (!value.allFinite()) throw NumericalError("non-finite constant at node #" + std::to_string(nodes_.size()));
  nodes_.push_back(Node{std::move(value), Tensor(), "constant", nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor value) {
  if (!value.allFinite()) throw NumericalError("non-finite parameter at node #" + std::to_string(nodes_.size()));
  nodes_.push_back(Node{std::move(value), Tensor(), "parameter", nullptr, true});
  Var v(this, nodes_.size() - 1);
  parameters_.push_back(v);
  return v;
}

Var Graph::record(Tensor value, const char* op, std::initializer_list<Var> parents, Backward backward) {
  if (!value.allFinite()) {
    throw NumericalError(std::string("non-finite value produced by '") + op + "' at node #" +
                         std::to_string(nodes_.size()));
  }
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph() != this) throw ConfigError(std::string("operand of '") + op + "' belongs to another graph");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), op, needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor Graph::gradient(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.adjoint.size() == 0) return Tensor::Zero(node.value.rows(), node.value.cols());
  return node.adjoint;
}

void Graph::backward(Var output) {
  if (output.graph() != this) throw ConfigError("backward() on a foreign node");
  const Tensor& out = nodes_[output.id()].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionError("backward() needs a scalar output, got " + std::to_string(out.rows()) + "x" +
                         std::to_string(out.cols()) + " from '" + nodes_[output.id()].op + "'");
  }
  for (Node& node : nodes_) node.adjoint.resize(0, 0);
  if (!nodes_[output.id()].requires_grad) return;
  nodes_[output.id()].adjoint = Tensor::Ones(1, 1);
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && node.adjoint.size() != 0) node.backward(*this, id);
  }
}

Evaluation evaluate_with_gradients(const TraceBuilder& build, std::span<const Tensor> inputs) {
  Graph graph;
  std::vector<Var> params;
  params.reserve(inputs.size());
  for (const Tensor& t : inputs) params.push_back(graph.parameter(t));
  Var out = build(graph, params);
  graph.backward(out);
  Evaluation result;
  result.value = out.scalar();
  result.gradients.reserve(params.size());
  for (const Var& p : params) result.gradients.push_back(graph.gradient(p));
  return result;
}

}  // namespace sd2::ad
