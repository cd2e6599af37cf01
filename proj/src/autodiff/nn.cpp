#include "sd2/nn.hpp"

#include "sd2/errors.hpp"
#include "sd2/rng.hpp"

#include <cmath>

namespace sd2::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kElu:
      return "elu";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "elu") return Activation::kElu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return x;
    case Activation::kElu:
      return ad::elu(x);
    case Activation::kSigmoid:
      return ad::sigmoid(x);
  }
  return x;
}

Var dense_forward(Var weight, Var bias, Var input, Activation act) {
  if (input.cols() != weight.rows()) {
    throw DimensionError("dense_forward: input width " + std::to_string(input.cols()) +
                         " does not match layer input dimension " + std::to_string(weight.rows()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw DimensionError("dense_forward: bias must be 1x" + std::to_string(weight.cols()));
  }
  if (!input.valid() || input.graph() != weight.graph()) throw ConfigError("dense_forward: operands on different graphs");
  // One node for affine map and activation; the activation derivative is
  // recovered from the output.
  ad::Graph& g = *input.graph();
  Tensor out = input.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  switch (act) {
    case Activation::kIdentity:
      break;
    case Activation::kElu:
      out = out.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
      break;
    case Activation::kSigmoid:
      out = out.unaryExpr([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
      break;
  }
  return g.record(std::move(out), "dense", {weight, bias, input},
                  [weight, bias, input, act](ad::Graph& gr, std::size_t self) {
                    const Tensor& adj = gr.adjoint(self);
                    const Tensor& y = gr.value(self);
                    Tensor d;
                    switch (act) {
                      case Activation::kIdentity:
                        d = adj;
                        break;
                      case Activation::kElu:
                        d = adj.cwiseProduct(y.unaryExpr([](double v) { return v > 0.0 ? 1.0 : v + 1.0; }));
                        break;
                      case Activation::kSigmoid:
                        d = (adj.array() * y.array() * (1.0 - y.array())).matrix();
                        break;
                    }
                    if (gr.requires_grad(weight)) gr.accumulate(weight.id(), gr.value(input).transpose() * d);
                    if (gr.requires_grad(bias)) gr.accumulate(bias.id(), d.colwise().sum());
                    if (gr.requires_grad(input)) gr.accumulate(input.id(), d * gr.value(weight).transpose());
                  });
}

std::size_t ParameterStore::add(std::string name, Tensor value, bool is_weight) {
  params_.push_back(Parameter{std::move(name), std::move(value), is_weight});
  return params_.size() - 1;
}

std::size_t ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<Var> ParameterStore::bind(ad::Graph& graph) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(graph.parameter(p.value));
  return out;
}

Var Mlp::forward(std::span<const Var> bound, Var input) const {
  Var h = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const bool last = i + 1 == layers.size();
    h = dense_forward(bound[layers[i].weight], bound[layers[i].bias], h, last ? output : hidden);
  }
  return h;
}

DenseLayer make_dense(ParameterStore& store, const std::string& name, Index in, Index out, std::uint64_t seed) {
  if (in < 1 || out < 1) throw DimensionError("dense layer '" + name + "' needs positive dimensions");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  CounterRng rng(seed, name);
  Tensor w(in, out);
  std::uint64_t c = 0;
  for (Index i = 0; i < in; ++i) {
    for (Index j = 0; j < out; ++j) w(i, j) = limit * (2.0 * rng.uniform(c++) - 1.0);
  }
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.weight = store.add(name + ".weight", std::move(w), true);
  layer.bias = store.add(name + ".bias", Tensor::Zero(1, out), false);
  return layer;
}

Mlp make_mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& widths,
             Activation hidden, Activation output, std::uint64_t seed) {
  if (widths.size() < 2) throw DimensionError("mlp '" + name + "' needs at least input and output widths");
  Mlp mlp;
  mlp.hidden = hidden;
  mlp.output = output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    mlp.layers.push_back(make_dense(store, name + "." + std::to_string(i), widths[i], widths[i + 1], seed));
  }
  return mlp;
}

}  // namespace sd2::nn
