#include "doctest.h"
#include "helpers.hpp"

#include "sd2/errors.hpp"
#include "sd2/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <limits>

using namespace sd2;
using namespace sd2::eval;

namespace {

ArchConfig small_arch(Mode mode, int input_dim) {
  ArchConfig a;
  a.input_dim = input_dim;
  a.rep_dim = 3;
  a.hidden_width = 6;
  a.hidden_depth = 1;
  a.head_width = 4;
  a.retain_width = 4;
  a.rebalance_width = 4;
  a.mode = mode;
  return a;
}

train::TrainConfig small_config() {
  train::TrainConfig c;
  c.arch = small_arch(Mode::kBinary, 5);
  c.batch_size = 64;
  c.max_epochs = 3;
  c.patience = 3;
  return c;
}

data::Splits binary_splits(std::uint64_t seed) {
  return data::independent_splits(data::SyntheticSpec::parse("0-2-2-1-1", 150, seed));
}

void quiet(std::string_view) {}

}  // namespace

TEST_CASE("eps_ate from predictions") {
  const std::vector<double> p1{0.75, 0.75}, p0{0.5, 0.5};  // true ATE 0.25
  const std::vector<double> g1{0.8, 0.8}, g0{0.5, 0.5};    // predicted 0.30
  CHECK(eps_ate(p1, p0, g1, g0) == doctest::Approx(0.05));
  CHECK(eps_ate(p1, p0, p1, p0) == 0.0);
  CHECK_THROWS_AS(eps_ate(p1, p0, std::vector<double>{0.1}, g0), DimensionError);
}

TEST_CASE("a model that ignores t scores the magnitude of the true ATE") {
  data::SyntheticSpec s = data::SyntheticSpec::parse("0-2-2-1-1", 300, 2);
  const auto ds = data::gen_binary(s);
  Sd2Model m(small_arch(Mode::kBinary, 5), 1);
  m.set_channel(TreatmentChannel::kNone);
  CHECK(eps_ate(m, ds) == doctest::Approx(std::abs(data::true_ate(ds))).epsilon(1e-12));
}

TEST_CASE("eps_ate on a model matches the model's own predictions") {
  const auto ds = data::gen_binary(data::SyntheticSpec::parse("0-2-2-1-1", 100, 3));
  const Sd2Model m(small_arch(Mode::kBinary, 5), 4);
  const Eigen::VectorXd g1 = m.predict_outcome(ds.x, 1.0), g0 = m.predict_outcome(ds.x, 0.0);
  const double predicted = (g1 - g0).mean();
  CHECK(eps_ate(m, ds) == doctest::Approx(std::abs(data::true_ate(ds) - predicted)).epsilon(1e-12));
  data::GeneratedDataset no_truth = ds;
  no_truth.has_truth = false;
  CHECK_THROWS_AS(eps_ate(m, no_truth), ConfigError);
}

TEST_CASE("counterfactual MSE of a constant offset on a one-point grid") {
  data::DemandSpec spec;
  spec.n = 20;
  auto ds = data::gen_continuous(spec);
  Sd2Model m(small_arch(Mode::kContinuous, 3), 1);
  for (auto& p : m.parameters().all()) {
    if (p.name.rfind("head_y.", 0) == 0) p.value.setZero();
  }
  m.normalizer().y_mean = 1.5;
  // Zero outcome head predicts y_mean; place the truth 2 above it at t0.
  const double t0 = 22.0;
  ds.demand_beta = 1.0;
  for (std::size_t i = 0; i < ds.sum_c.size(); ++i) {
    ds.sum_a[i] = 0.0;
    ds.sum_c[i] = 1.5 + 2.0 - data::demand_psi(t0) + 2.0 * t0;
  }
  const std::vector<double> grid{t0};
  CHECK(counterfactual_mse(m, ds, grid) == doctest::Approx(4.0));
  CHECK_THROWS_AS(counterfactual_mse(m, ds, std::vector<double>{}), ConfigError);
}

TEST_CASE("counterfactual MSE brute force") {
  data::DemandSpec spec;
  spec.n = 30;
  spec.seed = 5;
  const auto ds = data::gen_continuous(spec);
  const Sd2Model m(small_arch(Mode::kContinuous, 3), 2);
  const auto grid = default_grid(ds, 4);
  double acc = 0.0;
  for (double t : grid) {
    const Eigen::VectorXd g = m.predict_outcome(ds.x, t);
    for (ad::Index i = 0; i < ds.size(); ++i) acc += std::pow(g(i) - ds.surface(i, t), 2);
  }
  CHECK(counterfactual_mse(m, ds, grid) == doctest::Approx(acc / (ds.size() * 4.0)).epsilon(1e-12));
  CHECK(metric(m, ds) == doctest::Approx(counterfactual_mse(m, ds, default_grid(ds))));
  CHECK(metric_name(Mode::kContinuous) == "mse");
}

TEST_CASE("default grid covers the central quantiles") {
  data::GeneratedDataset ds;
  ds.kind = data::DatasetKind::kDemand;
  for (int i = 0; i <= 100; ++i) ds.t.push_back(i);
  const auto g = default_grid(ds, 5, 0.9);
  REQUIRE(g.size() == 5);
  CHECK(g.front() == doctest::Approx(5.0));
  CHECK(g.back() == doctest::Approx(95.0));
  CHECK(g[2] == doctest::Approx(50.0));
  CHECK(default_grid(ds, 1, 0.9) == std::vector<double>{50.0});
  CHECK_THROWS_AS(default_grid(ds, 0), ConfigError);
}

TEST_CASE("attribution ratio examples") {
  Sd2Model m(small_arch(Mode::kBinary, 5), 1);
  const std::vector<char> roles{'z', 'z', 'c', 'c', 'a'};
  for (auto& p : m.parameters().all()) {
    if (p.name.find(".0.weight") == std::string::npos) continue;
    p.value.setConstant(1.0);
    if (p.name.rfind("enc_z", 0) == 0) p.value.topRows(2).setConstant(2.0);
    if (p.name.rfind("enc_a", 0) == 0) p.value.row(4).setConstant(3.0);
  }
  const auto r = attribution(m, roles);
  CHECK(r.at('z').ratio() == doctest::Approx(2.0));
  CHECK(r.at('z').true_slice == doctest::Approx(2.0));
  CHECK(r.at('c').ratio() == doctest::Approx(1.0));
  CHECK(r.at('a').ratio() == doctest::Approx(3.0));
  CHECK_THROWS_AS(attribution(m, std::vector<char>{'z', 'c'}), DimensionError);
  CHECK_THROWS_AS(attribution(m, std::vector<char>{'z', 'z', 'c', 'c', 'c'}), ConfigError);
  const FactorAttribution lone{'z', 1.0, 0.0};
  CHECK(lone.ratio() == std::numeric_limits<double>::infinity());
}

TEST_CASE("aggregate and formatting") {
  const auto s = aggregate(std::vector<double>{0.01, 0.03});
  CHECK(s.mean == doctest::Approx(0.02));
  CHECK(s.stddev == doctest::Approx(0.01));
  CHECK(s.count == 2);
  CHECK(format_mean_std(0.010, 0.008) == "0.010(0.008)");
  CHECK(s.format() == "0.020(0.010)");
  CHECK(aggregate(std::vector<double>{0.5}).stddev == 0.0);
  CHECK_THROWS_AS(aggregate(std::vector<double>{}), ConfigError);
}

TEST_CASE("identical train and test splits give identical scores") {
  auto s = binary_splits(1);
  s.test = s.train;
  const auto r = protocol_run(small_config(), s, quiet);
  CHECK(r.within == r.out);
  const auto again = protocol_scores(r.trained.model, s);
  CHECK(again.first == r.within);
  CHECK(again.second == r.out);
}

TEST_CASE("replicated protocol report") {
  test::TempDir dir("report");
  const train::DataFactory factory = [](std::uint64_t seed) { return binary_splits(seed); };
  auto report = replicate_protocol(small_config(), 2, 7, factory, 1, quiet);
  CHECK(report.metric == "eps_ate");
  CHECK(report.variant == "Total");
  REQUIRE(report.runs.size() == 2);
  CHECK(report.failures() == 0);
  const std::vector<double> outs{report.runs[0].out, report.runs[1].out};
  CHECK(report.out.mean == doctest::Approx(aggregate(outs).mean));
  CHECK(report.runs[0].seed == train::replica_seed(7, 0));

  const auto path = dir.path() / "report.csv";
  report.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // header, two runs, mean, std
  CHECK(lines[3].rfind("mean,", 0) == 0);
  CHECK(lines[4].rfind("std,", 0) == 0);
  CHECK(report.to_json().at("runs").size() == 2);
}

TEST_CASE("failed replicas are excluded from the summaries") {
  auto c = small_config();
  c.arch.input_dim = 9;
  const train::DataFactory factory = [](std::uint64_t seed) { return binary_splits(seed); };
  auto report = replicate_protocol(c, 2, 0, factory, 1, quiet);
  CHECK(report.failures() == 2);
  for (const auto& r : report.runs) CHECK_FALSE(r.error.empty());
}
