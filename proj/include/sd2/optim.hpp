#pragma once

#include "sd2/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace sd2::optim {

using ad::Tensor;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
};

// Zeroed accumulators shaped like `params`.
AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config);

// One bias-corrected Adam update, in place.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  ad::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Value and analytic gradients at a parameter point.
using LossWithGradient = std::function<ad::Evaluation(std::span<const Tensor>)>;

// Central differences coordinate-wise against the analytic gradient.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult finite_diff_check(const LossWithGradient& loss, std::vector<Tensor> params, double eps);

// Same, for a loss written as a trace over parameter leaves.
GradCheckResult finite_diff_check(const ad::TraceBuilder& build, std::vector<Tensor> params, double eps);

}  // namespace sd2::optim
