#include "sd2/losses.hpp"

#include "sd2/errors.hpp"

#include <algorithm>
#include <cmath>

namespace sd2::losses {
namespace {

constexpr double kProbFloor = 1e-7;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

Graph& graph_of(Var v) {
  if (!v.valid()) throw ConfigError("loss input is not attached to a graph");
  return *v.graph();
}

Var zero(Graph& g) { return g.constant(Tensor::Zero(1, 1)); }

Var one_minus(Var p) { return add_scalar(neg(p), 1.0); }

void check_column(Var v, Index n, const char* what) {
  if (v.cols() != 1 || v.rows() != n) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(n) + "x1, got " +
                         std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  }
}

GaussianVar detach(const GaussianVar& g) { return {ad::detach(g.mean), ad::detach(g.log_std)}; }

Var teacher_kl(Var student, Var teacher, KlDirection dir) {
  return dir == KlDirection::kStudentTeacher ? mean(bernoulli_kl(student, ad::detach(teacher)))
                                             : mean(bernoulli_kl(ad::detach(teacher), student));
}

Var teacher_kl(const GaussianVar& student, const GaussianVar& teacher, KlDirection dir) {
  return dir == KlDirection::kStudentTeacher ? mean(gaussian_kl(student, detach(teacher)))
                                             : mean(gaussian_kl(detach(teacher), student));
}

DistillVars finish(DistillVars v) {
  v.sum = v.label_first + v.label_second + v.teacher_first + v.teacher_second + v.peer;
  return v;
}

// Upper-triangle entry (i, j) holding the median off-diagonal value of `d`;
// {-1, -1} when that median is numerically zero or d has one row.
std::pair<Index, Index> median_offdiag(const Tensor& d) {
  std::vector<std::pair<Index, Index>> cells;
  cells.reserve(static_cast<std::size_t>(d.rows() * (d.rows() - 1) / 2));
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = i + 1; j < d.cols(); ++j) cells.emplace_back(i, j);
  }
  if (cells.empty()) return {-1, -1};
  auto mid = cells.begin() + static_cast<std::ptrdiff_t>(cells.size() / 2);
  std::nth_element(cells.begin(), mid, cells.end(),
                   [&d](const auto& a, const auto& b) { return d(a.first, a.second) < d(b.first, b.second); });
  if (d(mid->first, mid->second) <= 1e-12) return {-1, -1};
  return *mid;
}

void check_finite_nonneg(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) {
    throw ConfigError(std::string("loss.") + name + " must be a finite non-negative number");
  }
}

}  // namespace

void LossWeights::validate() const {
  check_finite_nonneg(alpha, "alpha");
  check_finite_nonneg(beta, "beta");
  check_finite_nonneg(gamma, "gamma");
  check_finite_nonneg(delta, "delta");
  check_finite_nonneg(omega_cont, "omega_cont");
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}, {"omega_cont", w.omega_cont}};
}

LossWeights weights_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("loss weights: expected an object");
  LossWeights w;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ConfigError("loss." + key + ": expected a number");
    const double v = value.get<double>();
    if (key == "alpha") w.alpha = v;
    else if (key == "beta") w.beta = v;
    else if (key == "gamma") w.gamma = v;
    else if (key == "delta") w.delta = v;
    else if (key == "omega_cont") w.omega_cont = v;
    else throw ConfigError("loss." + key + ": unknown field");
  }
  w.validate();
  return w;
}

std::string to_string(Kernel k) { return k == Kernel::kLinear ? "linear" : "rbf"; }

Kernel kernel_from_string(const std::string& s) {
  if (s == "linear") return Kernel::kLinear;
  if (s == "rbf") return Kernel::kRbf;
  throw ConfigError("kernel: expected 'linear' or 'rbf', got '" + s + "'");
}

std::string to_string(KlDirection d) {
  return d == KlDirection::kStudentTeacher ? "student_teacher" : "teacher_student";
}

KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "student_teacher") return KlDirection::kStudentTeacher;
  if (s == "teacher_student") return KlDirection::kTeacherStudent;
  throw ConfigError("teacher_direction: expected 'student_teacher' or 'teacher_student', got '" + s + "'");
}

SampleWeights SampleWeights::ones(ad::Index n) { return {Eigen::VectorXd::Ones(n)}; }

SampleWeights importance_weights(std::span<const double> pi_c, std::span<const double> t) {
  if (pi_c.size() != t.size()) throw DimensionError("importance_weights: propensity and treatment lengths differ");
  double n1 = 0.0;
  for (double ti : t) {
    if (ti != 0.0 && ti != 1.0) throw ConfigError("importance_weights: treatment must be 0 or 1");
    n1 += ti;
  }
  const double n0 = static_cast<double>(t.size()) - n1;
  if (n1 == 0.0 || n0 == 0.0) throw DegenerateBatchError("importance_weights: batch holds a single treatment class");
  SampleWeights w{Eigen::VectorXd(static_cast<Index>(t.size()))};
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p1 = std::clamp(pi_c[i], kProbFloor, 1.0 - kProbFloor);
    const bool treated = t[i] == 1.0;
    const double own = treated ? p1 : 1.0 - p1;
    const double ratio = treated ? n0 / n1 : n1 / n0;
    w.values(static_cast<Index>(i)) = std::clamp(1.0 + ratio * (1.0 - own) / own, kWeightFloor, kWeightCeiling);
  }
  return w;
}

Var clamp_probability(Var p) { return clamp(p, kProbFloor, 1.0 - kProbFloor); }

Var cross_entropy(Var q, Var target) {
  if (q.rows() != target.rows() || q.cols() != target.cols()) throw DimensionError("cross_entropy: shape mismatch");
  const Var qc = clamp_probability(q);
  return neg(mul(target, log(qc)) + mul(one_minus(target), log(one_minus(qc))));
}

Var bernoulli_kl(Var q, Var p) {
  if (q.rows() != p.rows() || q.cols() != p.cols()) throw DimensionError("bernoulli_kl: shape mismatch");
  const Var qc = clamp_probability(q);
  const Var pc = clamp_probability(p);
  const Var qn = one_minus(qc);
  return mul(qc, log(qc) - log(pc)) + mul(qn, log(qn) - log(one_minus(pc)));
}

Var gaussian_kl(const GaussianVar& q, const GaussianVar& p) {
  // log s_p - log s_q + (s_q^2 + (m_q - m_p)^2) / (2 s_p^2) - 1/2
  const Var d = q.mean - p.mean;
  const Var num = exp(scale(q.log_std, 2.0)) + square(d);
  const Var inv = exp(scale(p.log_std, -2.0));
  return add_scalar(p.log_std - q.log_std + scale(mul(num, inv), 0.5), -0.5);
}

Var gaussian_nll(const GaussianVar& q, Var target) {
  if (q.mean.rows() != target.rows()) throw DimensionError("gaussian_nll: shape mismatch");
  const Var z2 = mul(square(target - q.mean), exp(scale(q.log_std, -2.0)));
  return add_scalar(q.log_std + scale(z2, 0.5), kHalfLog2Pi);
}

Var adjustment_disc(Var r, std::span<const double> t, Kernel kernel) {
  if (static_cast<std::size_t>(r.rows()) != t.size()) {
    throw DimensionError("adjustment_disc: representation rows and treatment length differ");
  }
  std::vector<Index> g0, g1;
  for (std::size_t i = 0; i < t.size(); ++i) (t[i] > 0.5 ? g1 : g0).push_back(static_cast<Index>(i));
  if (g0.empty() || g1.empty()) throw DegenerateBatchError("adjustment_disc: batch holds a single treatment class");
  const Var r0 = gather_rows(r, g0);
  const Var r1 = gather_rows(r, g1);
  if (kernel == Kernel::kLinear) return sum_squares(mean_rows(r0) - mean_rows(r1));

  const Tensor& rv = r.value();
  Tensor sq = rv.rowwise().squaredNorm();
  Tensor d = (sq * Tensor::Ones(1, rv.rows()) + Tensor::Ones(rv.rows(), 1) * sq.transpose() -
              2.0 * rv * rv.transpose())
                 .cwiseMax(0.0);
  // The bandwidth is the squared distance of the median pair, so it carries
  // gradient like every other distance.
  Graph& g = *r.graph();
  const auto [bi, bj] = median_offdiag(d);
  Var inv_bw = g.constant(Tensor::Constant(1, 1, -1.0));
  if (bi >= 0) {
    const Index pi[1] = {bi}, pj[1] = {bj};
    inv_bw = div(inv_bw, sum_squares(gather_rows(r, pi) - gather_rows(r, pj)));
  }
  auto k = [&g, inv_bw](Var a, Var b) {
    const Var bw = matmul(matmul(g.constant(Tensor::Ones(a.rows(), 1)), inv_bw), g.constant(Tensor::Ones(1, b.rows())));
    return mean(exp(mul(pairwise_sq_dist(a, b), bw)));
  };
  return k(r0, r0) + k(r1, r1) - 2.0 * k(r0, r1);
}

DistillVars distill_unit_treatment(const BinaryTrace& tr, Var t, const LossOptions& o) {
  check_column(tr.q_t, t.rows(), "distill_unit_treatment");
  DistillVars v;
  v.label_first = mean(cross_entropy(tr.q_t_z, t));
  v.label_second = o.confounder_label_term ? mean(cross_entropy(tr.q_t_c, t)) : zero(graph_of(t));
  v.teacher_first = teacher_kl(tr.q_t_z, tr.q_t, o.teacher_direction);
  v.teacher_second = teacher_kl(tr.q_t_c, tr.q_t, o.teacher_direction);
  v.peer = mean(bernoulli_kl(tr.q_t_c, tr.q_t_z));
  return finish(v);
}

DistillVars distill_unit_outcome(const BinaryTrace& tr, Var y, const LossOptions& o) {
  check_column(tr.q_y, y.rows(), "distill_unit_outcome");
  DistillVars v;
  v.label_first = mean(cross_entropy(tr.q_y_a, y));
  v.label_second = mean(cross_entropy(tr.q_y_c, y));
  v.teacher_first = teacher_kl(tr.q_y_a, tr.q_y, o.teacher_direction);
  v.teacher_second = teacher_kl(tr.q_y_c, tr.q_y, o.teacher_direction);
  v.peer = mean(bernoulli_kl(tr.q_y_a, tr.q_y_c));
  return finish(v);
}

DistillVars distill_unit_treatment(const ContinuousTrace& tr, Var t, const LossOptions& o) {
  check_column(tr.t.mean, t.rows(), "distill_unit_treatment");
  DistillVars v;
  v.label_first = mean(gaussian_nll(tr.t_z, t));
  v.label_second = o.confounder_label_term ? mean(gaussian_nll(tr.t_c, t)) : zero(graph_of(t));
  v.teacher_first = teacher_kl(tr.t_z, tr.t, o.teacher_direction);
  v.teacher_second = teacher_kl(tr.t_c, tr.t, o.teacher_direction);
  v.peer = mean(gaussian_kl(tr.t_c, tr.t_z));
  return finish(v);
}

DistillVars distill_unit_outcome(const ContinuousTrace& tr, Var y, const LossOptions& o) {
  check_column(tr.y.mean, y.rows(), "distill_unit_outcome");
  DistillVars v;
  v.label_first = mean(gaussian_nll(tr.y_a, y));
  v.label_second = mean(gaussian_nll(tr.y_c, y));
  v.teacher_first = teacher_kl(tr.y_a, tr.y, o.teacher_direction);
  v.teacher_second = teacher_kl(tr.y_c, tr.y, o.teacher_direction);
  v.peer = mean(gaussian_kl(tr.y_a, tr.y_c));
  return finish(v);
}

Var continuous_adjust_loss(const ContinuousTrace& tr, Var t, const LossOptions& o) {
  check_column(tr.t_c.mean, t.rows(), "continuous_adjust_loss");
  return mean(gaussian_nll(tr.t_c, t)) + teacher_kl(tr.t_c, tr.t, o.teacher_direction) +
         mean(gaussian_kl(tr.t_c, tr.t_a));
}

Var continuous_rebalance_loss(const ContinuousTrace& tr, Var t, const LossOptions& o) {
  check_column(tr.t_z.mean, t.rows(), "continuous_rebalance_loss");
  return mean(gaussian_nll(tr.t_z, t)) + teacher_kl(tr.t_z, tr.t, o.teacher_direction) +
         mean(gaussian_kl(tr.t_z, tr.t_c_tilde));
}

double LossBreakdown::weighted_sum(const LossWeights& w) const {
  return factual_y + w.alpha * factual_t + w.beta * adjust + w.gamma * (distill_outcome + distill_treatment) +
         w.omega_cont * rebalance + w.delta * reg;
}

Var weight_penalty(std::span<const Var> bound, const nn::ParameterStore& store) {
  if (bound.size() != store.size()) throw DimensionError("weight_penalty: bound parameters do not match the store");
  if (bound.empty()) throw ConfigError("weight_penalty: no parameters");
  Var total = zero(*bound.front().graph());
  for (std::size_t i = 0; i < bound.size(); ++i) {
    if (store[i].is_weight) total = total + sum_squares(bound[i]);
  }
  return total;
}

namespace {

// Runs `build`, tagging numerical failures with the term name.
template <class F>
Var guarded(const char* name, F&& build) {
  try {
    return build();
  } catch (const DegenerateBatchError&) {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("loss term '") + name + "': " + e.what());
  }
}

// Accumulates coefficient * term into the running total and the breakdown slot.
struct Accumulator {
  Var total;
  template <class F>
  void add(double coef, const char* name, double& slot, F&& build) {
    const Var term = guarded(name, build);
    slot = term.scalar();
    total = total + scale(term, coef);
  }
};

}  // namespace

LossTrace total_loss_binary(std::span<const Var> bound, const nn::ParameterStore& store, const BinaryTrace& tr,
                            const Tensor& t, const Tensor& y, const SampleWeights& weights,
                            const LossWeights& coef, const LossOptions& options) {
  Graph& g = graph_of(tr.q_y);
  const Index n = t.rows();
  check_column(tr.q_y, n, "total_loss_binary");
  if (y.rows() != n || weights.values.size() != n) throw DimensionError("total_loss_binary: batch sizes differ");
  const Var tv = g.constant(t);
  const Var yv = g.constant(y);
  LossTrace out;
  Accumulator acc;
  acc.total = guarded("factual_y", [&] { return mean(mul(g.constant(weights.values), cross_entropy(tr.q_y, yv))); });
  out.breakdown.factual_y = acc.total.scalar();
  if (coef.alpha > 0.0) {
    acc.add(coef.alpha, "factual_t", out.breakdown.factual_t, [&] { return mean(cross_entropy(tr.q_t, tv)); });
  }
  if (coef.beta > 0.0) {
    const std::span<const double> ts(t.data(), static_cast<std::size_t>(n));
    acc.add(coef.beta, "adjust", out.breakdown.adjust, [&] { return adjustment_disc(tr.r_a, ts, options.kernel); });
  }
  if (coef.gamma > 0.0) {
    acc.add(coef.gamma, "distill_outcome", out.breakdown.distill_outcome,
            [&] { return distill_unit_outcome(tr, yv, options).sum; });
    acc.add(coef.gamma, "distill_treatment", out.breakdown.distill_treatment,
            [&] { return distill_unit_treatment(tr, tv, options).sum; });
  }
  if (coef.delta > 0.0) {
    acc.add(coef.delta, "reg", out.breakdown.reg, [&] { return weight_penalty(bound, store); });
  }
  out.total = acc.total;
  out.breakdown.total = out.total.scalar();
  return out;
}

LossTrace total_loss_continuous(std::span<const Var> bound, const nn::ParameterStore& store,
                                const ContinuousTrace& tr, const Tensor& t, const Tensor& y,
                                const LossWeights& coef, const LossOptions& options) {
  Graph& g = graph_of(tr.y.mean);
  const Index n = t.rows();
  check_column(tr.y.mean, n, "total_loss_continuous");
  if (y.rows() != n) throw DimensionError("total_loss_continuous: batch sizes differ");
  const Var tv = g.constant(t);
  const Var yv = g.constant(y);
  LossTrace out;
  Accumulator acc;
  acc.total = guarded("factual_y", [&] { return mean(gaussian_nll(tr.y, yv)); });
  out.breakdown.factual_y = acc.total.scalar();
  if (coef.alpha > 0.0) {
    acc.add(coef.alpha, "factual_t", out.breakdown.factual_t, [&] { return mean(gaussian_nll(tr.t, tv)); });
  }
  if (coef.beta > 0.0) {
    acc.add(coef.beta, "adjust", out.breakdown.adjust, [&] { return continuous_adjust_loss(tr, tv, options); });
  }
  if (coef.gamma > 0.0) {
    acc.add(coef.gamma, "distill_outcome", out.breakdown.distill_outcome,
            [&] { return distill_unit_outcome(tr, yv, options).sum; });
    acc.add(coef.gamma, "distill_treatment", out.breakdown.distill_treatment,
            [&] { return distill_unit_treatment(tr, tv, options).sum; });
  }
  if (coef.omega_cont > 0.0) {
    acc.add(coef.omega_cont, "rebalance", out.breakdown.rebalance,
            [&] { return continuous_rebalance_loss(tr, tv, options); });
  }
  if (coef.delta > 0.0) {
    acc.add(coef.delta, "reg", out.breakdown.reg, [&] { return weight_penalty(bound, store); });
  }
  out.total = acc.total;
  out.breakdown.total = out.total.scalar();
  return out;
}

// ---- Value-level helpers ------------------------------------------------------------

DistillTerms to_terms(const DistillVars& v) {
  return {v.label_first.scalar(), v.label_second.scalar(), v.teacher_first.scalar(), v.teacher_second.scalar(),
          v.peer.scalar()};
}

Tensor column(std::span<const double> v) {
  Tensor out(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i), 0) = v[i];
  return out;
}

BinaryTrace constant_trace(Graph& g, const HeadOutputsBinary& o) {
  BinaryTrace t;
  t.q_t = g.constant(o.q_t);
  t.q_t_z = g.constant(o.q_t_z);
  t.q_t_c = g.constant(o.q_t_c);
  t.q_y = g.constant(o.q_y);
  t.q_y_a = g.constant(o.q_y_a);
  t.q_y_c = g.constant(o.q_y_c);
  return t;
}

ContinuousTrace constant_trace(Graph& g, const HeadOutputsContinuous& o) {
  auto c = [&g](const GaussianHead& h) { return GaussianVar{g.constant(h.mean), g.constant(h.log_std)}; };
  ContinuousTrace t;
  t.t = c(o.t);
  t.t_z = c(o.t_z);
  t.t_c = c(o.t_c);
  t.t_a = c(o.t_a);
  t.t_c_tilde = c(o.t_c_tilde);
  t.y = c(o.y);
  t.y_a = c(o.y_a);
  t.y_c = c(o.y_c);
  return t;
}

DistillTerms distill_unit_treatment(const HeadOutputsBinary& outputs, std::span<const double> t,
                                    const LossOptions& options) {
  Graph g;
  return to_terms(distill_unit_treatment(constant_trace(g, outputs), g.constant(column(t)), options));
}

DistillTerms distill_unit_outcome(const HeadOutputsBinary& outputs, std::span<const double> y,
                                  const LossOptions& options) {
  Graph g;
  return to_terms(distill_unit_outcome(constant_trace(g, outputs), g.constant(column(y)), options));
}

double adjustment_disc(const Tensor& r, std::span<const double> t, Kernel kernel) {
  Graph g;
  return adjustment_disc(g.constant(r), t, kernel).scalar();
}

double continuous_adjust_loss(const HeadOutputsContinuous& outputs, std::span<const double> t,
                              const LossOptions& options) {
  Graph g;
  return continuous_adjust_loss(constant_trace(g, outputs), g.constant(column(t)), options).scalar();
}

double continuous_rebalance_loss(const HeadOutputsContinuous& outputs, std::span<const double> t,
                                 const LossOptions& options) {
  Graph g;
  return continuous_rebalance_loss(constant_trace(g, outputs), g.constant(column(t)), options).scalar();
}

}  // namespace sd2::losses
