#pragma once

// Exact information measures over a small joint of (Y, R_a, R_c), plus the
// closed-form KL divergences used by the distillation losses. All in nats.

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace sd2::info {

enum class Variable : int { kY = 0, kRa = 1, kRc = 2 };

// Bitmask over {Y, R_a, R_c}.
class VarSet {
 public:
  constexpr VarSet() = default;
  constexpr VarSet(std::initializer_list<Variable> vars) {
    for (Variable v : vars) bits_ |= 1u << static_cast<int>(v);
  }
  constexpr bool contains(Variable v) const { return (bits_ >> static_cast<int>(v)) & 1u; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr VarSet operator|(VarSet o) const { return VarSet(bits_ | o.bits_); }

 private:
  constexpr explicit VarSet(unsigned bits) : bits_(bits) {}
  unsigned bits_ = 0;
};

class DiscreteJoint {
 public:
  static constexpr int kMinAlphabet = 2;
  static constexpr int kMaxAlphabet = 8;
  static constexpr double kSumTolerance = 1e-12;

  // `table` is indexed (y, r_a, r_c) row-major. Throws ConfigError on an
  // invalid alphabet size, a negative entry, or a total off 1 by > 1e-12.
  DiscreteJoint(std::array<int, 3> sizes, std::vector<double> table);

  const std::array<int, 3>& sizes() const { return sizes_; }
  int size(Variable v) const { return sizes_[static_cast<int>(v)]; }
  double at(int y, int a, int c) const { return table_[index(y, a, c)]; }
  const std::vector<double>& table() const { return table_; }

 private:
  std::size_t index(int y, int a, int c) const {
    return (static_cast<std::size_t>(y) * sizes_[1] + a) * sizes_[2] + c;
  }

  std::array<int, 3> sizes_;
  std::vector<double> table_;
};

// Shannon entropy of the marginal over `subset`. Throws ConfigError if empty.
double entropy(const DiscreteJoint& joint, VarSet subset);

// H(target | given) = H(target, given) - H(given).
double cond_entropy(const DiscreteJoint& joint, VarSet target, VarSet given);

double mutual_info(const DiscreteJoint& joint, Variable a, Variable b);
double cond_mutual_info(const DiscreteJoint& joint, Variable a, Variable b, Variable given);

// I(R_a;R_c) - [I(Y;R_c) + I(R_a;R_c|Y) - I(R_c;Y|R_a)]. Zero for every joint.
double chain_rule_residual(const DiscreteJoint& joint);

// [I(Y;R_c) - I(R_c;Y|R_a)] - [H(Y) - H(Y|R_c) - H(Y|R_a) + H(Y|R_c,R_a)]. Zero for every joint.
double entropy_form_residual(const DiscreteJoint& joint);

// I(R_a;R_c) - [I(Y;R_c) - I(R_c;Y|R_a)], i.e. I(R_a;R_c|Y): how far the joint
// is from R_a and R_c sharing only Y-related information.
double premise_gap(const DiscreteJoint& joint);

struct GaussianParams {
  double mean = 0.0;
  double stddev = 1.0;
};

// KL(q || p) for univariate normals. Throws ConfigError on stddev <= 0.
double gaussian_kl(GaussianParams q, GaussianParams p);

inline constexpr double kProbabilityFloor = 1e-7;

// KL(Bern(q) || Bern(p)); p clamped to [1e-7, 1 - 1e-7], 0 ln 0 = 0.
// Throws ConfigError outside [0, 1].
double bernoulli_kl(double q, double p);

// ---- Joint constructors for identity checks --------------------------------

// Dirichlet(1)-style random table from a seed.
DiscreteJoint random_joint(std::array<int, 3> sizes, std::uint64_t seed);

// Y = R_a xor R_c with independent fair bits.
DiscreteJoint xor_joint();

// p(y) p(r_a | y) p(r_c | y): R_a and R_c independent given Y.
DiscreteJoint conditionally_independent_joint(std::array<int, 3> sizes, std::uint64_t seed);

struct IdentityReport {
  std::size_t random_joints = 0;
  std::size_t ci_joints = 0;
  double max_chain_rule_residual = 0.0;
  double max_entropy_form_residual = 0.0;
  double max_ci_premise_gap = 0.0;
  double xor_premise_gap_error = 0.0;  // |premise_gap - cond_mutual_info| on the XOR joint
  bool passed = false;
};

inline constexpr double kIdentityTolerance = 1e-10;
inline constexpr double kXorTolerance = 1e-12;

// Random joints with alphabets drawn from [2, 4]; `ci_joints` conditionally
// independent joints; the XOR joint.
IdentityReport run_identity_suite(std::size_t random_joints, std::size_t ci_joints, std::uint64_t seed);

}  // namespace sd2::info
