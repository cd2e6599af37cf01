#pragma once

#include "sd2/autodiff.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sd2::nn {

using ad::Index;
using ad::Tensor;
using ad::Var;

enum class Activation { kIdentity, kElu, kSigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

Var activate(Var x, Activation act);

// output = act(input * weight + bias). weight is (in x out), bias is (1 x out).
Var dense_forward(Var weight, Var bias, Var input, Activation act);

struct Parameter {
  std::string name;
  Tensor value;
  bool is_weight = true;  // false for biases; only weights enter the L2 penalty
};

// Ordered, named parameter list. Order is the checkpoint order.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value, bool is_weight);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t find(const std::string& name) const;  // throws ConfigError when absent
  std::size_t scalar_count() const;

  // Leaves for every parameter on `graph`, same order as the store.
  std::vector<Var> bind(ad::Graph& graph) const;

 private:
  std::vector<Parameter> params_;
};

struct DenseLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Index in = 0;
  Index out = 0;
};

// Stack of dense layers; `hidden` after every layer but the last.
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation hidden = Activation::kElu;
  Activation output = Activation::kIdentity;

  Var forward(std::span<const Var> bound, Var input) const;
  Index in_dim() const { return layers.front().in; }
  Index out_dim() const { return layers.back().out; }
};

// Glorot-uniform weights, zero biases; deterministic in (seed, name).
DenseLayer make_dense(ParameterStore& store, const std::string& name, Index in, Index out, std::uint64_t seed);

// widths = {in, h1, ..., out}
Mlp make_mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& widths,
             Activation hidden, Activation output, std::uint64_t seed);

}  // namespace sd2::nn
