#include "sd2/info.hpp"

#include "sd2/errors.hpp"
#include "sd2/rng.hpp"

#include <cmath>
#include <algorithm>
#include <numeric>
#include <string>

namespace sd2::info {
namespace {

double clip_rounding(double v) { return (v < 0.0 && v > -1e-12) ? 0.0 : v; }

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

std::vector<double> random_simplex(RngStream& rng, std::size_t n) {
  // Exponential spacings give a uniform point on the simplex.
  std::vector<double> w(n);
  for (double& x : w) x = -std::log(rng.uniform());
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::array<int, 3> sizes, std::vector<double> table)
    : sizes_(sizes), table_(std::move(table)) {
  std::size_t cells = 1;
  for (int s : sizes_) {
    if (s < kMinAlphabet || s > kMaxAlphabet) {
      throw ConfigError("alphabet size " + std::to_string(s) + " outside [2, 8]");
    }
    cells *= static_cast<std::size_t>(s);
  }
  if (table_.size() != cells) {
    throw ConfigError("joint table has " + std::to_string(table_.size()) + " cells, expected " +
                      std::to_string(cells));
  }
  double total = 0.0;
  for (double p : table_) {
    if (!(p >= 0.0)) throw ConfigError("joint table has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw ConfigError("joint table sums to " + std::to_string(total) + ", not 1");
  }
}

double entropy(const DiscreteJoint& joint, VarSet subset) {
  if (subset.empty()) throw ConfigError("entropy of an empty variable set");
  const auto& s = joint.sizes();
  const bool ky = subset.contains(Variable::kY);
  const bool ka = subset.contains(Variable::kRa);
  const bool kc = subset.contains(Variable::kRc);
  std::vector<double> marginal(static_cast<std::size_t>(s[0] * s[1] * s[2]), 0.0);
  for (int y = 0; y < s[0]; ++y) {
    for (int a = 0; a < s[1]; ++a) {
      for (int c = 0; c < s[2]; ++c) {
        const int key = ((ky ? y : 0) * s[1] + (ka ? a : 0)) * s[2] + (kc ? c : 0);
        marginal[static_cast<std::size_t>(key)] += joint.at(y, a, c);
      }
    }
  }
  double h = 0.0;
  for (double p : marginal) h -= xlogx(p);
  return clip_rounding(h);
}

double cond_entropy(const DiscreteJoint& joint, VarSet target, VarSet given) {
  if (given.empty()) return entropy(joint, target);
  return entropy(joint, target | given) - entropy(joint, given);
}

double mutual_info(const DiscreteJoint& joint, Variable a, Variable b) {
  if (a == b) throw ConfigError("mutual_info needs two distinct variables");
  const double mi = entropy(joint, {a}) + entropy(joint, {b}) - entropy(joint, {a, b});
  return clip_rounding(mi);
}

double cond_mutual_info(const DiscreteJoint& joint, Variable a, Variable b, Variable given) {
  if (a == b || a == given || b == given) throw ConfigError("cond_mutual_info needs three distinct variables");
  // H(A|C) - H(A|B,C)
  const double mi = cond_entropy(joint, {a}, {given}) - cond_entropy(joint, {a}, {b, given});
  return clip_rounding(mi);
}

double chain_rule_residual(const DiscreteJoint& joint) {
  using V = Variable;
  const double lhs = mutual_info(joint, V::kRa, V::kRc);
  const double rhs = mutual_info(joint, V::kY, V::kRc) + cond_mutual_info(joint, V::kRa, V::kRc, V::kY) -
                     cond_mutual_info(joint, V::kRc, V::kY, V::kRa);
  return lhs - rhs;
}

double entropy_form_residual(const DiscreteJoint& joint) {
  using V = Variable;
  const double mi_form = mutual_info(joint, V::kY, V::kRc) - cond_mutual_info(joint, V::kRc, V::kY, V::kRa);
  const double entropy_form = entropy(joint, {V::kY}) - cond_entropy(joint, {V::kY}, {V::kRc}) -
                              cond_entropy(joint, {V::kY}, {V::kRa}) +
                              cond_entropy(joint, {V::kY}, {V::kRc, V::kRa});
  return mi_form - entropy_form;
}

double premise_gap(const DiscreteJoint& joint) {
  using V = Variable;
  const double gap = mutual_info(joint, V::kRa, V::kRc) -
                     (mutual_info(joint, V::kY, V::kRc) - cond_mutual_info(joint, V::kRc, V::kY, V::kRa));
  return clip_rounding(gap);
}

double gaussian_kl(GaussianParams q, GaussianParams p) {
  if (!(q.stddev > 0.0) || !(p.stddev > 0.0)) throw ConfigError("gaussian_kl needs positive standard deviations");
  const double d = q.mean - p.mean;
  const double kl = std::log(p.stddev) - std::log(q.stddev) +
                    (q.stddev * q.stddev + d * d) / (2.0 * p.stddev * p.stddev) - 0.5;
  return std::max(kl, 0.0);
}

double bernoulli_kl(double q, double p) {
  if (!(q >= 0.0 && q <= 1.0) || !(p >= 0.0 && p <= 1.0)) {
    throw ConfigError("bernoulli_kl arguments must lie in [0, 1]");
  }
  p = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  double kl = 0.0;
  if (q > 0.0) kl += q * std::log(q / p);
  if (q < 1.0) kl += (1.0 - q) * std::log((1.0 - q) / (1.0 - p));
  return std::max(kl, 0.0);
}

DiscreteJoint random_joint(std::array<int, 3> sizes, std::uint64_t seed) {
  RngStream rng(seed, "random_joint");
  const auto n = static_cast<std::size_t>(sizes[0] * sizes[1] * sizes[2]);
  std::vector<double> table = random_simplex(rng, n);
  // Renormalise against accumulated rounding.
  const double total = std::accumulate(table.begin(), table.end(), 0.0);
  for (double& p : table) p /= total;
  return DiscreteJoint(sizes, std::move(table));
}

DiscreteJoint xor_joint() {
  std::vector<double> table(8, 0.0);
  for (int a = 0; a < 2; ++a) {
    for (int c = 0; c < 2; ++c) table[static_cast<std::size_t>(((a ^ c) * 2 + a) * 2 + c)] = 0.25;
  }
  return DiscreteJoint({2, 2, 2}, std::move(table));
}

DiscreteJoint conditionally_independent_joint(std::array<int, 3> sizes, std::uint64_t seed) {
  RngStream rng(seed, "ci_joint");
  const std::vector<double> py = random_simplex(rng, static_cast<std::size_t>(sizes[0]));
  std::vector<std::vector<double>> pa;
  std::vector<std::vector<double>> pc;
  for (int y = 0; y < sizes[0]; ++y) {
    pa.push_back(random_simplex(rng, static_cast<std::size_t>(sizes[1])));
    pc.push_back(random_simplex(rng, static_cast<std::size_t>(sizes[2])));
  }
  std::vector<double> table;
  table.reserve(static_cast<std::size_t>(sizes[0] * sizes[1] * sizes[2]));
  for (int y = 0; y < sizes[0]; ++y) {
    for (int a = 0; a < sizes[1]; ++a) {
      for (int c = 0; c < sizes[2]; ++c) table.push_back(py[y] * pa[y][a] * pc[y][c]);
    }
  }
  const double total = std::accumulate(table.begin(), table.end(), 0.0);
  for (double& p : table) p /= total;
  return DiscreteJoint(sizes, std::move(table));
}

IdentityReport run_identity_suite(std::size_t random_joints, std::size_t ci_joints, std::uint64_t seed) {
  IdentityReport report;
  report.random_joints = random_joints;
  report.ci_joints = ci_joints;
  RngStream sizes_rng(seed, "identity_sizes");
  auto draw_sizes = [&sizes_rng]() {
    return std::array<int, 3>{2 + static_cast<int>(sizes_rng.below(3)), 2 + static_cast<int>(sizes_rng.below(3)),
                              2 + static_cast<int>(sizes_rng.below(3))};
  };
  for (std::size_t i = 0; i < random_joints; ++i) {
    const DiscreteJoint j = random_joint(draw_sizes(), derive_seed(seed, 2 * i));
    report.max_chain_rule_residual = std::max(report.max_chain_rule_residual, std::abs(chain_rule_residual(j)));
    report.max_entropy_form_residual = std::max(report.max_entropy_form_residual, std::abs(entropy_form_residual(j)));
  }
  for (std::size_t i = 0; i < ci_joints; ++i) {
    const DiscreteJoint j = conditionally_independent_joint(draw_sizes(), derive_seed(seed, 2 * i + 1));
    report.max_ci_premise_gap = std::max(report.max_ci_premise_gap, premise_gap(j));
  }
  const DiscreteJoint x = xor_joint();
  report.xor_premise_gap_error =
      std::abs(premise_gap(x) - cond_mutual_info(x, Variable::kRa, Variable::kRc, Variable::kY));
  report.passed = report.max_chain_rule_residual < kIdentityTolerance &&
                  report.max_entropy_form_residual < kIdentityTolerance &&
                  report.max_ci_premise_gap < kIdentityTolerance && report.xor_premise_gap_error < kXorTolerance;
  return report;
}

}  // namespace sd2::info
