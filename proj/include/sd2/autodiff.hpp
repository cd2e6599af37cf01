#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Graph records every operation in execution order, so the node vector is a
// topological order by construction. Values are Eigen matrices; scalars are
// 1x1. Nodes that do not depend on a parameter carry no backward closure.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sd2::ad {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Graph;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  Graph() { nodes_.reserve(512); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose adjoint is reported by backward().
  Var parameter(Tensor value);
  // Appends a computed node. `backward` is dropped when no parent needs a
  // gradient. Throws NumericalError naming the op if `value` is not finite.
  Var record(Tensor value, const char* op, std::initializer_list<Var> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }

  // Zero-sized until something flows into the node.
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].adjoint; }
  // Adjoint of `v`, or zeros of its shape when nothing reached it.
  Tensor gradient(Var v) const;

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.adjoint.size() == 0) {
      node.adjoint = delta;
    } else {
      node.adjoint += delta;
    }
  }

  // Resets every adjoint, seeds `output` with 1 and sweeps the tape backwards.
  // Throws DimensionError when `output` is not 1x1.
  void backward(Var output);

  const std::vector<Var>& parameters() const { return parameters_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    const char* op = "";
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Var> parameters_;
};

// ---- Operations -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var div(Var a, Var b);  // elementwise
Var add_row(Var a, Var row);  // a (n x k) + row (1 x k) on every row
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var elu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Index start, Index count);
Var gather_rows(Var a, std::span<const Index> rows);

Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // column means, 1 x k
Var sum_squares(Var a);

// Pairwise squared Euclidean distances between rows of a (n x k) and b (m x k).
Var pairwise_sq_dist(Var a, Var b);

// Constant copy: no gradient flows through.
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// ---- Whole-trace evaluation ----------------------------------------------

struct Evaluation {
  double value = 0.0;
  std::vector<Tensor> gradients;  // one per input, in input order
};

// Builds a trace from parameter leaves and returns the scalar node.
using TraceBuilder = std::function<Var(Graph&, std::span<const Var> params)>;

// Runs `build` on fresh parameter leaves holding `inputs` and returns the
// scalar value with its exact reverse-mode gradients.
Evaluation evaluate_with_gradients(const TraceBuilder& build, std::span<const Tensor> inputs);

}  // namespace sd2::ad
