#include "sd2/optim.hpp"

#include "sd2/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sd2::optim {

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const Tensor& p : params) {
    state.first_moment.push_back(Tensor::Zero(p.rows(), p.cols()));
    state.second_moment.push_back(Tensor::Zero(p.rows(), p.cols()));
  }
  return state;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " +
                         std::to_string(state.first_moment.size()) + " accumulators");
  }
  const AdamConfig& c = state.config;
  if (c.learning_rate < 0.0) throw ConfigError("adam_step: negative learning rate");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
        params[i].rows() != state.first_moment[i].rows() || params[i].cols() != state.first_moment[i].cols()) {
      throw DimensionError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= c.learning_rate * (m.array() / correction1) /
                         ((v.array() / correction2).sqrt() + c.epsilon);
  }
}

GradCheckResult finite_diff_check(const LossWithGradient& loss, std::vector<Tensor> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ConfigError("finite_diff_check: eps must lie in (0, 1e-3]");
  auto probe = [&](const std::vector<Tensor>& at) {
    const double v = loss(at).value;
    if (!std::isfinite(v)) throw NumericalError("finite_diff_check: loss is not finite at a probe point");
    return v;
  };
  const ad::Evaluation base = loss(params);
  if (!std::isfinite(base.value)) throw NumericalError("finite_diff_check: loss is not finite at the base point");
  if (base.gradients.size() != params.size()) throw DimensionError("finite_diff_check: gradient count mismatch");

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (ad::Index k = 0; k < params[p].size(); ++k) {
      double* slot = params[p].data() + k;
      const double saved = *slot;
      *slot = saved + eps;
      const double up = probe(params);
      *slot = saved - eps;
      const double down = probe(params);
      *slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = base.gradients[p].data()[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > result.max_relative_error) {
        result = GradCheckResult{rel, p, k, analytic, numeric};
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const ad::TraceBuilder& build, std::vector<Tensor> params, double eps) {
  return finite_diff_check(
      [&build](std::span<const Tensor> at) { return ad::evaluate_with_gradients(build, at); }, std::move(params),
      eps);
}

}  // namespace sd2::optim
