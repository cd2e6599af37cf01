#include "sd2/autodiff.hpp"

#include "sd2/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sd2::ad {
namespace {

std::string shape(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " + shape(b.value()));
  }
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw ConfigError("operation on an unbound Var");
  return *a.graph();
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a.value()) + " times " + shape(b.value()));
  }
  Graph& g = graph_of(a);
  Tensor out = a.value() * b.value();
  return g.record(std::move(out), "matmul", {a, b}, [a, b](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    if (gr.requires_grad(a)) gr.accumulate(a.id(), adj * gr.value(b).transpose());
    if (gr.requires_grad(b)) gr.accumulate(b.id(), gr.value(a).transpose() * adj);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Graph& g = graph_of(a);
  return g.record(a.value() + b.value(), "add", {a, b}, [a, b](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), gr.adjoint(self));
    gr.accumulate(b.id(), gr.adjoint(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Graph& g = graph_of(a);
  return g.record(a.value() - b.value(), "sub", {a, b}, [a, b](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), gr.adjoint(self));
    gr.accumulate(b.id(), -gr.adjoint(self));
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Graph& g = graph_of(a);
  Tensor out = a.value().cwiseProduct(b.value());
  return g.record(std::move(out), "mul", {a, b}, [a, b](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    if (gr.requires_grad(a)) gr.accumulate(a.id(), adj.cwiseProduct(gr.value(b)));
    if (gr.requires_grad(b)) gr.accumulate(b.id(), adj.cwiseProduct(gr.value(a)));
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a, b);
  Graph& g = graph_of(a);
  Tensor out = a.value().cwiseQuotient(b.value());
  return g.record(std::move(out), "div", {a, b}, [a, b](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    const Tensor& bv = gr.value(b);
    if (gr.requires_grad(a)) gr.accumulate(a.id(), adj.cwiseQuotient(bv));
    if (gr.requires_grad(b)) {
      Tensor db = -adj.cwiseProduct(gr.value(a)).cwiseQuotient(bv.cwiseProduct(bv));
      gr.accumulate(b.id(), db);
    }
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape(a.value()) + " plus row " + shape(row.value()));
  }
  Graph& g = graph_of(a);
  Tensor out = a.value().rowwise() + row.value().row(0);
  return g.record(std::move(out), "add_row", {a, row}, [a, row](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    gr.accumulate(a.id(), adj);
    if (gr.requires_grad(row)) gr.accumulate(row.id(), adj.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  return g.record(a.value() * s, "scale", {a},
                  [a, s](Graph& gr, std::size_t self) { gr.accumulate(a.id(), gr.adjoint(self) * s); });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value().array() + s;
  return g.record(std::move(out), "add_scalar", {a},
                  [a](Graph& gr, std::size_t self) { gr.accumulate(a.id(), gr.adjoint(self)); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var elu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return g.record(std::move(out), "elu", {a}, [a](Graph& gr, std::size_t self) {
    Tensor d = gr.value(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
    gr.accumulate(a.id(), gr.adjoint(self).cwiseProduct(d));
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const std::size_t id = g.size();
  return g.record(std::move(out), "sigmoid", {a}, [a, id](Graph& gr, std::size_t self) {
    const Tensor& s = gr.value(id);
    Tensor d = s.array() * (1.0 - s.array());
    gr.accumulate(a.id(), gr.adjoint(self).cwiseProduct(d));
  });
}

Var exp(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value().array().exp();
  const std::size_t id = g.size();
  return g.record(std::move(out), "exp", {a}, [a, id](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), gr.adjoint(self).cwiseProduct(gr.value(id)));
  });
}

Var log(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value().array().log();
  return g.record(std::move(out), "log", {a}, [a](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), gr.adjoint(self).cwiseQuotient(gr.value(a)));
  });
}

Var square(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value().array().square();
  return g.record(std::move(out), "square", {a}, [a](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), 2.0 * gr.adjoint(self).cwiseProduct(gr.value(a)));
  });
}

Var clamp(Var a, double lo, double hi) {
  Graph& g = graph_of(a);
  Tensor out = a.value().cwiseMax(lo).cwiseMin(hi);
  return g.record(std::move(out), "clamp", {a}, [a, lo, hi](Graph& gr, std::size_t self) {
    Tensor mask = gr.value(a).unaryExpr([lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    gr.accumulate(a.id(), gr.adjoint(self).cwiseProduct(mask));
  });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape(a.value()) + " vs " + shape(b.value()));
  }
  Graph& g = graph_of(a);
  Tensor out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ka = a.cols();
  const Index kb = b.cols();
  return g.record(std::move(out), "concat_cols", {a, b}, [a, b, ka, kb](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    if (gr.requires_grad(a)) gr.accumulate(a.id(), adj.leftCols(ka));
    if (gr.requires_grad(b)) gr.accumulate(b.id(), adj.rightCols(kb));
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of " + shape(a.value()));
  }
  Graph& g = graph_of(a);
  Tensor out = a.value().middleCols(start, count);
  const Index rows = a.rows();
  const Index cols = a.cols();
  return g.record(std::move(out), "slice_cols", {a}, [a, start, count, rows, cols](Graph& gr, std::size_t self) {
    Tensor d = Tensor::Zero(rows, cols);
    d.middleCols(start, count) = gr.adjoint(self);
    gr.accumulate(a.id(), d);
  });
}

Var gather_rows(Var a, std::span<const Index> rows) {
  Graph& g = graph_of(a);
  Tensor out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of " + shape(a.value()));
    }
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  const Index n = a.rows();
  return g.record(std::move(out), "gather_rows", {a}, [a, idx = std::move(idx), n](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    Tensor d = Tensor::Zero(n, adj.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += adj.row(static_cast<Index>(i));
    gr.accumulate(a.id(), d);
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return g.record(std::move(out), "sum", {a}, [a, r, c](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), Tensor::Constant(r, c, gr.adjoint(self)(0, 0)));
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw DimensionError("mean_rows of an empty tensor");
  Graph& g = graph_of(a);
  Tensor out = a.value().colwise().mean();
  const Index r = a.rows();
  return g.record(std::move(out), "mean_rows", {a}, [a, r](Graph& gr, std::size_t self) {
    Tensor d = gr.adjoint(self).replicate(r, 1) / static_cast<double>(r);
    gr.accumulate(a.id(), d);
  });
}

Var sum_squares(Var a) {
  Graph& g = graph_of(a);
  Tensor out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return g.record(std::move(out), "sum_squares", {a}, [a](Graph& gr, std::size_t self) {
    gr.accumulate(a.id(), 2.0 * gr.adjoint(self)(0, 0) * gr.value(a));
  });
}

Var pairwise_sq_dist(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("pairwise_sq_dist: width mismatch " + shape(a.value()) + " vs " + shape(b.value()));
  }
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Eigen::VectorXd an = av.rowwise().squaredNorm();
  Eigen::VectorXd bn = bv.rowwise().squaredNorm();
  Tensor out = -2.0 * av * bv.transpose();
  out.colwise() += an;
  out.rowwise() += bn.transpose();
  out = out.cwiseMax(0.0);
  return g.record(std::move(out), "pairwise_sq_dist", {a, b}, [a, b](Graph& gr, std::size_t self) {
    const Tensor& adj = gr.adjoint(self);
    const Tensor& A = gr.value(a);
    const Tensor& B = gr.value(b);
    if (gr.requires_grad(a)) {
      Eigen::VectorXd rs = adj.rowwise().sum();
      Tensor d = 2.0 * (A.array().colwise() * rs.array()).matrix() - 2.0 * adj * B;
      gr.accumulate(a.id(), d);
    }
    if (gr.requires_grad(b)) {
      Eigen::VectorXd cs = adj.colwise().sum().transpose();
      Tensor d = 2.0 * (B.array().colwise() * cs.array()).matrix() - 2.0 * adj.transpose() * A;
      gr.accumulate(b.id(), d);
    }
  });
}

Var detach(Var a) { return graph_of(a).constant(a.value()); }

}  // namespace sd2::ad
