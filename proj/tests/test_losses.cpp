#include "doctest.h"
#include "gradcheck_cases.hpp"
#include "helpers.hpp"

#include "sd2/errors.hpp"
#include "sd2/info.hpp"
#include "sd2/losses.hpp"

#include <cmath>
#include <numbers>

using namespace sd2;
using namespace sd2::losses;
using ad::Graph;
using ad::Tensor;

namespace {

HeadOutputsBinary uniform_heads(Index n, double qt, double qtz, double qtc, double qy, double qya, double qyc) {
  auto c = [n](double v) { return Tensor::Constant(n, 1, v); };
  return {c(qt), c(qtz), c(qtc), c(qy), c(qya), c(qyc)};
}

GaussianHead gauss(Index n, double mean, double stddev) {
  return {Tensor::Constant(n, 1, mean), Tensor::Constant(n, 1, std::log(stddev))};
}

HeadOutputsContinuous all_gauss(Index n, double mean, double stddev) {
  const GaussianHead g = gauss(n, mean, stddev);
  return {g, g, g, g, g, g, g, g};
}

}  // namespace

TEST_CASE("importance weights") {
  // Balanced classes, propensity 0.5.
  auto w = importance_weights(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<double>{1, 0, 1, 0});
  for (Index i = 0; i < 4; ++i) CHECK(w.values(i) == doctest::Approx(2.0));
  // Own-class propensity near 1 sends the weight to its floor.
  w = importance_weights(std::vector<double>{1.0 - 1e-9, 0.5}, std::vector<double>{1, 0});
  CHECK(w.values(0) == doctest::Approx(1.0).epsilon(1e-6));
  // Tiny own-class propensity is clipped at 100.
  w = importance_weights(std::vector<double>{0.001, 0.5}, std::vector<double>{1, 0});
  CHECK(w.values(0) == kWeightCeiling);
  // Class-count ratio enters: 3 treated, 1 control, all at 0.5.
  w = importance_weights(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<double>{1, 1, 1, 0});
  CHECK(w.values(0) == doctest::Approx(1.0 + 1.0 / 3.0));
  CHECK(w.values(3) == doctest::Approx(4.0));
  CHECK_THROWS_AS(importance_weights(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 1}), DegenerateBatchError);
  CHECK_THROWS_AS(importance_weights(std::vector<double>{0.5, 0.5}, std::vector<double>{0, 0}), DegenerateBatchError);
  CHECK_THROWS_AS(importance_weights(std::vector<double>{0.5}, std::vector<double>{1, 0}), DimensionError);
}

TEST_CASE("importance weights stay in [1, 100]") {
  RngStream rng(3, "weights");
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> pi, t;
    for (int i = 0; i < 20; ++i) {
      pi.push_back(rng.uniform());
      t.push_back(i < 1 + rep % 19 ? 1.0 : 0.0);
    }
    const auto w = importance_weights(pi, t);
    CHECK(w.values.minCoeff() >= 1.0);
    CHECK(w.values.maxCoeff() <= 100.0);
  }
}

TEST_CASE("adjustment discrepancy") {
  std::vector<double> t{0, 0, 1, 1};
  Tensor same(4, 2);
  same << 1, 2, 3, 4, 1, 2, 3, 4;
  CHECK(adjustment_disc(same, t, Kernel::kLinear) == doctest::Approx(0.0));
  CHECK(std::abs(adjustment_disc(same, t, Kernel::kRbf)) < 1e-12);

  Tensor singles(2, 1);
  singles << 0, 1;
  CHECK(adjustment_disc(singles, std::vector<double>{0, 1}, Kernel::kLinear) == doctest::Approx(1.0));

  Tensor means(4, 2);
  means << 0, 0, 2, 0, 1, 0, 1, 0;
  CHECK(std::abs(adjustment_disc(means, t, Kernel::kLinear)) < 1e-15);
  CHECK(adjustment_disc(means, t, Kernel::kRbf) > 0.0);  // same means, different spread

  CHECK_THROWS_AS(adjustment_disc(same, std::vector<double>{1, 1, 1, 1}, Kernel::kLinear), DegenerateBatchError);
  CHECK_THROWS_AS(adjustment_disc(same, std::vector<double>{0, 1}, Kernel::kLinear), DimensionError);
}

TEST_CASE("RBF discrepancy matches a direct V-statistic") {
  const Tensor r = test::random_tensor(9, 3, 5);
  std::vector<double> t{0, 1, 0, 1, 1, 0, 0, 1, 0};
  // Oracle: median off-diagonal squared distance as bandwidth.
  std::vector<double> d;
  for (Index i = 0; i < 9; ++i)
    for (Index j = i + 1; j < 9; ++j) d.push_back((r.row(i) - r.row(j)).squaredNorm());
  std::sort(d.begin(), d.end());
  const double bw = d[d.size() / 2];
  auto k = [&](int g1, int g2) {
    double s = 0;
    int n = 0;
    for (Index i = 0; i < 9; ++i)
      for (Index j = 0; j < 9; ++j)
        if (t[i] == g1 && t[j] == g2) {
          s += std::exp(-(r.row(i) - r.row(j)).squaredNorm() / bw);
          ++n;
        }
    return s / n;
  };
  const double oracle = k(0, 0) + k(1, 1) - 2 * k(0, 1);
  CHECK(adjustment_disc(r, t, Kernel::kRbf) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("treatment distillation unit") {
  const std::vector<double> t{1, 0, 1, 0};
  auto terms = distill_unit_treatment(uniform_heads(4, 0.3, 0.3, 0.3, 0.5, 0.5, 0.5), t);
  CHECK(std::abs(terms.teacher_first) < 1e-15);
  CHECK(std::abs(terms.teacher_second) < 1e-15);
  CHECK(std::abs(terms.peer) < 1e-15);

  terms = distill_unit_treatment(uniform_heads(4, 0.5, 0.8, 0.5, 0.5, 0.5, 0.5), t);
  CHECK(terms.peer == doctest::Approx(0.5 * std::log(0.625) + 0.5 * std::log(2.5)));

  // Q_T_z equal to the 0/1 labels: cross-entropy at the clamp floor.
  HeadOutputsBinary h = uniform_heads(4, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5);
  h.q_t_z = test::column(t);
  terms = distill_unit_treatment(h, t);
  CHECK(terms.label_first < 1e-6);
  CHECK(terms.label_second == doctest::Approx(std::numbers::ln2));

  LossOptions no_second;
  no_second.confounder_label_term = false;
  CHECK(distill_unit_treatment(h, t, no_second).label_second == 0.0);
}

TEST_CASE("outcome distillation unit") {
  const std::vector<double> y{1, 0, 0, 1};
  auto terms = distill_unit_outcome(uniform_heads(4, 0.5, 0.5, 0.5, 0.4, 0.4, 0.4), y);
  CHECK(std::abs(terms.teacher_first) + std::abs(terms.teacher_second) + std::abs(terms.peer) < 1e-15);
  terms = distill_unit_outcome(uniform_heads(4, 0.5, 0.5, 0.5, 0.9, 0.9, 0.9), y);
  CHECK(std::abs(terms.peer) < 1e-15);
  terms = distill_unit_outcome(uniform_heads(4, 0.5, 0.5, 0.5, 0.5, 1.0, 0.5), y);
  CHECK(terms.peer == doctest::Approx(std::numbers::ln2).epsilon(1e-5));
  CHECK(terms.sum() == doctest::Approx(terms.label_first + terms.label_second + terms.teacher_first +
                                       terms.teacher_second + terms.peer));
}

TEST_CASE("teacher KL direction swaps arguments") {
  const std::vector<double> y{1, 0};
  const auto h = uniform_heads(2, 0.5, 0.5, 0.5, 0.3, 0.9, 0.6);
  LossOptions rev;
  rev.teacher_direction = KlDirection::kTeacherStudent;
  const auto fwd = distill_unit_outcome(h, y);
  const auto bwd = distill_unit_outcome(h, y, rev);
  CHECK(fwd.teacher_first == doctest::Approx(info::bernoulli_kl(0.9, 0.3)));
  CHECK(bwd.teacher_first == doctest::Approx(info::bernoulli_kl(0.3, 0.9)));
  CHECK(fwd.peer == doctest::Approx(bwd.peer));
}

TEST_CASE("differentiable KLs agree with the closed forms") {
  Graph g;
  RngStream rng(1, "kl");
  for (int i = 0; i < 20; ++i) {
    const double q = rng.uniform(0.01, 0.99), p = rng.uniform(0.01, 0.99);
    CHECK(bernoulli_kl(g.constant(Tensor::Constant(1, 1, q)), g.constant(Tensor::Constant(1, 1, p))).scalar() ==
          doctest::Approx(info::bernoulli_kl(q, p)).epsilon(1e-12));
    const double mq = rng.normal(), mp = rng.normal(), sq = rng.uniform(0.2, 3), sp = rng.uniform(0.2, 3);
    GaussianVar gq{g.constant(Tensor::Constant(1, 1, mq)), g.constant(Tensor::Constant(1, 1, std::log(sq)))};
    GaussianVar gp{g.constant(Tensor::Constant(1, 1, mp)), g.constant(Tensor::Constant(1, 1, std::log(sp)))};
    CHECK(gaussian_kl(gq, gp).scalar() == doctest::Approx(info::gaussian_kl({mq, sq}, {mp, sp})).epsilon(1e-12));
  }
}

TEST_CASE("continuous adjust and rebalance losses") {
  const std::vector<double> t{0.3, -1.0, 2.0};
  auto h = all_gauss(3, 0.0, 1.0);
  // Identical Gaussians: only the NLL survives.
  const double nll_t = [&] {
    double s = 0;
    for (double v : t) s += 0.5 * std::log(2 * std::numbers::pi) + 0.5 * v * v;
    return s / 3;
  }();
  CHECK(continuous_adjust_loss(h, t) == doctest::Approx(nll_t));
  CHECK(continuous_rebalance_loss(h, t) == doctest::Approx(nll_t));

  // NLL at the mean with unit variance.
  h.t_c = {test::column(t), Tensor::Zero(3, 1)};
  h.t = h.t_c;
  h.t_a = gauss(3, 0.0, 1.0);
  h.t_a.mean = test::column(t);
  h.t_a.mean.array() -= 1.0;  // T_c = N(t, 1), T_a = N(t - 1, 1)
  CHECK(continuous_adjust_loss(h, t) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi) + 0.5));

  auto r = all_gauss(3, 0.0, 1.0);
  r.t_c_tilde = gauss(3, 1.0, 2.0);
  r.t_z = gauss(3, 0.0, 1.0);
  r.t = r.t_z;
  const double kl = std::numbers::ln2 + 2.0 / 8.0 - 0.5;  // KL(N(0,1) || N(1,2))
  CHECK(continuous_rebalance_loss(r, t) == doctest::Approx(nll_t + kl));
}

TEST_CASE("total loss isolation and decomposition") {
  ArchConfig a = test::detail::gradcheck_arch(Mode::kBinary);
  Sd2Model m(a, 4);
  const Tensor x = test::random_tensor(12, 5, 6);
  std::vector<double> tv, yv;
  for (int i = 0; i < 12; ++i) {
    tv.push_back(i % 3 == 0 ? 1.0 : 0.0);
    yv.push_back(i % 2 == 0 ? 1.0 : 0.0);
  }
  const Tensor t = column(tv), y = column(yv);
  const auto w = SampleWeights::ones(12);

  Graph g;
  auto bound = m.parameters().bind(g);
  auto tr = m.trace_binary(g, bound, x, t);
  const auto zero = total_loss_binary(bound, m.parameters(), tr, t, y, w, {0, 0, 0, 0, 0}, {});
  double ce = 0.0;
  for (Index i = 0; i < 12; ++i) {
    const double q = tr.q_y.value()(i, 0);
    ce -= yv[i] * std::log(q) + (1 - yv[i]) * std::log(1 - q);
  }
  CHECK(zero.breakdown.total == doctest::Approx(ce / 12).epsilon(1e-12));
  CHECK(zero.breakdown.adjust == 0.0);

  // Total is the coefficient-weighted sum of its parts.
  RngStream rng(9, "coef");
  for (int rep = 0; rep < 10; ++rep) {
    LossWeights c{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 0.1), 1.0};
    const auto lt = total_loss_binary(bound, m.parameters(), tr, t, y, w, c, {});
    const auto& b = lt.breakdown;
    const double recomputed = b.factual_y + c.alpha * b.factual_t + c.beta * b.adjust +
                              c.gamma * (b.distill_outcome + b.distill_treatment) + c.delta * b.reg;
    CHECK(std::abs(b.total - recomputed) < 1e-10);
    CHECK(std::abs(b.weighted_sum(c) - b.total) < 1e-10);
  }
}

TEST_CASE("perfect heads leave only the weight penalty") {
  Sd2Model m(test::detail::gradcheck_arch(Mode::kBinary), 4);
  Graph g;
  auto bound = m.parameters().bind(g);
  const std::vector<double> tv{1, 0, 1, 0}, yv{0, 0, 1, 1};
  HeadOutputsBinary h{column(tv), column(tv), column(tv), column(yv), column(yv), column(yv)};
  BinaryTrace tr = constant_trace(g, h);
  tr.r_a = g.constant(Tensor::Zero(4, 3));
  const LossWeights c{1.0, 0.0, 0.0, 0.5, 1.0};
  const auto lt = total_loss_binary(bound, m.parameters(), tr, column(tv), column(yv), SampleWeights::ones(4), c, {});
  double w2 = 0.0;
  for (const auto& p : m.parameters().all())
    if (p.is_weight) w2 += p.value.squaredNorm();
  // Clamped probabilities leave a floor of order 1e-7 per cross-entropy.
  CHECK(lt.breakdown.total == doctest::Approx(0.5 * w2).epsilon(1e-5));
}

TEST_CASE("continuous total isolates the outcome NLL") {
  Sd2Model m(test::detail::gradcheck_arch(Mode::kContinuous), 4);
  Graph g;
  auto bound = m.parameters().bind(g);
  const Tensor x = test::random_tensor(6, 5, 2), t = test::random_tensor(6, 1, 3), y = test::random_tensor(6, 1, 4);
  auto tr = m.trace_continuous(g, bound, x, t);
  const auto lt = total_loss_continuous(bound, m.parameters(), tr, t, y, {0, 0, 0, 0, 0}, {});
  CHECK(lt.breakdown.total == doctest::Approx(mean(gaussian_nll(tr.y, g.constant(y))).scalar()));
  CHECK(lt.breakdown.rebalance == 0.0);
}

TEST_CASE("loss weights JSON") {
  LossWeights w{0.5, 2, 1, 1e-3, 0.25};
  CHECK(weights_from_json(to_json(w)) == w);
  CHECK_THROWS_AS(weights_from_json({{"alpha", -1.0}}), ConfigError);
  CHECK_THROWS_AS(weights_from_json({{"lambda", 1.0}}), ConfigError);
  CHECK_THROWS_AS(weights_from_json({{"beta", "x"}}), ConfigError);
  CHECK(kernel_from_string("rbf") == Kernel::kRbf);
  CHECK_THROWS_AS(kernel_from_string("poly"), ConfigError);
}

TEST_CASE("binary loss gradients match central differences") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (auto& c : test::binary_gradcheck_cases(seed)) {
      CAPTURE(c.name);
      CAPTURE(seed);
      const auto r = optim::finite_diff_check(c.loss, c.params, 1e-5);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("continuous loss gradients match central differences") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (auto& c : test::continuous_gradcheck_cases(seed)) {
      CAPTURE(c.name);
      CAPTURE(seed);
      const auto r = optim::finite_diff_check(c.loss, c.params, 1e-5);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("teachers receive no gradient from the distillation KL") {
  Sd2Model m(test::detail::gradcheck_arch(Mode::kBinary), 3);
  Graph g;
  auto bound = m.parameters().bind(g);
  const Tensor x = test::random_tensor(8, 5, 1);
  const std::vector<double> tv{1, 0, 1, 0, 1, 0, 1, 0};
  auto tr = m.trace_binary(g, bound, x, column(tv));
  auto v = distill_unit_treatment(tr, g.constant(column(tv)), {});
  g.backward(v.teacher_first);
  const std::size_t head_t = m.parameters().find("head_t.1.weight");
  CHECK(g.gradient(bound[head_t]).isZero());
  const std::size_t head_t_z = m.parameters().find("head_t_z.1.weight");
  CHECK_FALSE(g.gradient(bound[head_t_z]).isZero());
}
