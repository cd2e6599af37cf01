#pragma once

// Training objectives. Everything here is recorded on a Graph so a single
// backward pass yields gradients for every term; the value-level helpers at
// the bottom wrap the same code on constant inputs.

#include "sd2/autodiff.hpp"
#include "sd2/model.hpp"
#include "sd2/nn.hpp"

#include "json.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace sd2::losses {

using ad::Graph;
using ad::Index;
using ad::Tensor;
using ad::Var;

// Coefficients of the total loss. `omega_cont` weights the rebalance term and
// exists only in continuous mode; per-sample weights are SampleWeights.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double delta = 1e-4;
  double omega_cont = 1.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights weights_from_json(const nlohmann::json& j);

enum class Kernel { kLinear, kRbf };
enum class KlDirection { kStudentTeacher, kTeacherStudent };

std::string to_string(Kernel k);
Kernel kernel_from_string(const std::string& s);
std::string to_string(KlDirection d);
KlDirection kl_direction_from_string(const std::string& s);

struct LossOptions {
  Kernel kernel = Kernel::kLinear;
  KlDirection teacher_direction = KlDirection::kStudentTeacher;
  // CE(Q_T_c, T) inside the treatment unit.
  bool confounder_label_term = true;

  friend bool operator==(const LossOptions&, const LossOptions&) = default;
};

inline constexpr double kWeightFloor = 1.0;
inline constexpr double kWeightCeiling = 100.0;

// Per-sample importance weights, each in [1, 100].
struct SampleWeights {
  Eigen::VectorXd values;
  static SampleWeights ones(ad::Index n);
};

// w_i = 1 + (n_{1-t_i} / n_{t_i}) * pi(1-t_i | R_c) / pi(t_i | R_c), clipped
// to [1, 100]. `pi_c` is P(T=1 | R_c), treated as a constant. Throws
// DegenerateBatchError when `t` holds a single class.
SampleWeights importance_weights(std::span<const double> pi_c, std::span<const double> t);

// ---- Elementwise building blocks (n x 1 in, n x 1 out) ------------------------

Var clamp_probability(Var p);
Var cross_entropy(Var q, Var target);
Var bernoulli_kl(Var q, Var p);
Var gaussian_kl(const GaussianVar& q, const GaussianVar& p);
Var gaussian_nll(const GaussianVar& q, Var target);

// Squared MMD between rows of `r` with t == 0 and with t == 1.
// Linear kernel: squared distance of group means. RBF: exp(-d^2 / m) with m
// the median pairwise squared distance of the pooled batch.
Var adjustment_disc(Var r, std::span<const double> t, Kernel kernel);

// ---- Distillation units ----------------------------------------------------------

// Labels (two), Teachers (two), Peer. Batch means; gradients flow to both
// peer sides, teachers are detached.
struct DistillVars {
  Var label_first, label_second;
  Var teacher_first, teacher_second;
  Var peer;
  Var sum;
};

struct DistillTerms {
  double label_first = 0.0, label_second = 0.0;
  double teacher_first = 0.0, teacher_second = 0.0;
  double peer = 0.0;
  double sum() const { return label_first + label_second + teacher_first + teacher_second + peer; }
};

// {CE(Q_T_z,T), CE(Q_T_c,T), KL(Q_T_z||Q_T), KL(Q_T_c||Q_T), KL(Q_T_c||Q_T_z)}
DistillVars distill_unit_treatment(const BinaryTrace& trace, Var t, const LossOptions& options);
// {CE(Q_Y_a,Y), CE(Q_Y_c,Y), KL(Q_Y_a||Q_Y), KL(Q_Y_c||Q_Y), KL(Q_Y_a||Q_Y_c)}
DistillVars distill_unit_outcome(const BinaryTrace& trace, Var y, const LossOptions& options);

// Gaussian counterparts over the continuous heads.
DistillVars distill_unit_treatment(const ContinuousTrace& trace, Var t, const LossOptions& options);
DistillVars distill_unit_outcome(const ContinuousTrace& trace, Var y, const LossOptions& options);

// NLL(T_c,T) + KL(T_c||T) + KL(T_c||T_a), batch-averaged, teacher detached.
Var continuous_adjust_loss(const ContinuousTrace& trace, Var t, const LossOptions& options);
// NLL(T_z,T) + KL(T_z||T) + KL(T_z||T_c~), batch-averaged, teacher detached.
Var continuous_rebalance_loss(const ContinuousTrace& trace, Var t, const LossOptions& options);

// ---- Totals --------------------------------------------------------------------------

struct LossBreakdown {
  double factual_y = 0.0;
  double factual_t = 0.0;
  double adjust = 0.0;
  double distill_outcome = 0.0;
  double distill_treatment = 0.0;
  double rebalance = 0.0;
  double reg = 0.0;
  double total = 0.0;

  static constexpr std::array<const char*, 8> kNames{"factual_y",         "factual_t", "adjust",
                                                     "distill_outcome",   "distill_treatment",
                                                     "rebalance",         "reg",       "total"};
  std::array<double, 8> as_array() const {
    return {factual_y, factual_t, adjust, distill_outcome, distill_treatment, rebalance, reg, total};
  }
  // Weighted sum of the parts in `w`'s coefficients.
  double weighted_sum(const LossWeights& w) const;
};

struct LossTrace {
  Var total;
  LossBreakdown breakdown;
};

// Squared L2 norm of every weight (biases excluded) in `bound`.
Var weight_penalty(std::span<const Var> bound, const nn::ParameterStore& store);

// mean_i w_i CE(Q_Y_i, Y_i) + alpha CE(Q_T,T) + beta disc + gamma (L_c^a + L_c^z) + delta ||W||^2.
// Terms whose coefficient is zero are skipped and reported as 0.
LossTrace total_loss_binary(std::span<const Var> bound, const nn::ParameterStore& store, const BinaryTrace& trace,
                            const Tensor& t, const Tensor& y, const SampleWeights& weights,
                            const LossWeights& coef, const LossOptions& options);

// NLL(Y) + alpha NLL(T) + beta L_a + gamma (L_c + L_z) + omega L_oc + delta ||W||^2.
// `t` and `y` in the heads' (standardised) units.
LossTrace total_loss_continuous(std::span<const Var> bound, const nn::ParameterStore& store,
                                const ContinuousTrace& trace, const Tensor& t, const Tensor& y,
                                const LossWeights& coef, const LossOptions& options);

// ---- Value-level helpers ----------------------------------------------------------------

DistillTerms to_terms(const DistillVars& v);

DistillTerms distill_unit_treatment(const HeadOutputsBinary& outputs, std::span<const double> t,
                                    const LossOptions& options = {});
DistillTerms distill_unit_outcome(const HeadOutputsBinary& outputs, std::span<const double> y,
                                  const LossOptions& options = {});
double adjustment_disc(const Tensor& r, std::span<const double> t, Kernel kernel);
double continuous_adjust_loss(const HeadOutputsContinuous& outputs, std::span<const double> t,
                              const LossOptions& options = {});
double continuous_rebalance_loss(const HeadOutputsContinuous& outputs, std::span<const double> t,
                                 const LossOptions& options = {});

// Trace whose nodes are constants holding `outputs`; representations are unset.
BinaryTrace constant_trace(Graph& graph, const HeadOutputsBinary& outputs);
ContinuousTrace constant_trace(Graph& graph, const HeadOutputsContinuous& outputs);

Tensor column(std::span<const double> v);

}  // namespace sd2::losses
