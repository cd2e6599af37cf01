#include "doctest.h"
#include "helpers.hpp"

#include "sd2/csv.hpp"
#include "sd2/datagen.hpp"
#include "sd2/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

using namespace sd2;
using namespace sd2::data;

namespace {

std::filesystem::path fixture_csv() { return std::filesystem::path(SD2_SOURCE_DIR) / "data" / "twins_fixture.csv"; }

TwinsSpec fixture_spec() {
  TwinsSpec s;
  s.csv = fixture_csv();
  s.m_columns = {"gestat10", "mager8", "mrace", "meduc6", "cigar6", "dmar"};
  s.r_columns = {"adequacy", "alcohol", "anemia", "cardiac", "diabetes", "hydra"};
  s.hidden = 2;
  s.seed = 4;
  return s;
}

void expect_equal(const GeneratedDataset& a, const GeneratedDataset& b) {
  CHECK(a.kind == b.kind);
  CHECK(a.x == b.x);
  CHECK(a.v == b.v);
  CHECK(a.t == b.t);
  CHECK(a.y == b.y);
  CHECK(a.roles == b.roles);
  CHECK(a.has_truth == b.has_truth);
  CHECK(a.u == b.u);
  CHECK(a.p1 == b.p1);
  CHECK(a.p0 == b.p0);
  CHECK(a.sum_a == b.sum_a);
  CHECK(a.sum_c == b.sum_c);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// E[sigmoid(W / 8)] for W ~ chi-squared with 8 degrees of freedom, by
// Simpson's rule on the density x^3 e^{-x/2} / 96.
double chi2_sigmoid_mean() {
  const int n = 200000;
  const double hi = 200.0, h = hi / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = i * h;
    const double f = x * x * x * std::exp(-x / 2) / 96.0 / (1.0 + std::exp(-x / 8.0));
    s += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("synthetic spec naming and parsing") {
  const auto s = SyntheticSpec::parse("0-4-4-2-2", 100, 3);
  CHECK(s.mz == 4);
  CHECK(s.mu == 2);
  CHECK(s.n == 100);
  CHECK(s.name() == "Syn-0-4-4-2-2");
  CHECK(SyntheticSpec::parse("Syn-2-3-3-1-1", 10, 0).mv == 2);
  CHECK_THROWS_AS(SyntheticSpec::parse("0-4-4-2", 10, 0), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("0-4-x-2-2", 10, 0), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("0-0-0-0-2", 10, 0), ConfigError);
  CHECK(synthetic_from_json(to_json(s)) == s);
  CHECK_THROWS_WITH_AS(synthetic_from_json({{"mz", 4}, {"bogus", 1}}), doctest::Contains("bogus"), ConfigError);
}

TEST_CASE("binary generator shape and ground truth") {
  SyntheticSpec s;
  s.n = 10000;
  const auto ds = gen_binary(s);
  CHECK(ds.x.rows() == 10000);
  CHECK(ds.x.cols() == 10);
  CHECK(ds.v.cols() == 0);
  CHECK(ds.u.cols() == 2);
  CHECK(ds.has_truth);
  CHECK(ds.role_columns('z') == std::vector<Index>{0, 1, 2, 3});
  CHECK(ds.role_columns('a') == std::vector<Index>{8, 9});
  CHECK_NOTHROW(ds.validate());
  for (std::size_t i = 0; i < ds.t.size(); ++i) {
    CHECK((ds.t[i] == 0.0 || ds.t[i] == 1.0));
    CHECK((ds.p1[i] > 0.0 && ds.p1[i] < 1.0));
  }
  const double mean_t = std::accumulate(ds.t.begin(), ds.t.end(), 0.0) / 10000.0;
  CHECK(std::abs(mean_t - 0.5) <= 0.02);
}

TEST_CASE("binary generator is deterministic in the seed") {
  SyntheticSpec s;
  s.n = 500;
  s.seed = 9;
  expect_equal(gen_binary(s), gen_binary(s));
  SyntheticSpec other = s;
  other.seed = 10;
  CHECK(gen_binary(s).x != gen_binary(other).x);
  // Rows are a pure function of (seed, row): a longer draw extends a shorter one.
  SyntheticSpec longer = s;
  longer.n = 800;
  CHECK(gen_binary(longer).x.topRows(500) == gen_binary(s).x);
}

TEST_CASE("true ATE examples") {
  GeneratedDataset ds;
  ds.has_truth = true;
  ds.p1 = {0.3, 0.7};
  ds.p0 = ds.p1;
  CHECK(true_ate(ds) == 0.0);
  ds.p1 = {0.8, 0.6};
  ds.p0 = {0.5, 0.5};
  CHECK(true_ate(ds) == doctest::Approx(0.2));
  GeneratedDataset no_truth;
  CHECK_THROWS_AS(true_ate(no_truth), ConfigError);
}

TEST_CASE("large-sample ATE of Syn-0-4-4-2-2 matches the closed-form expectation") {
  // p1 = sigmoid(chi2_8 / 8), p0 = sigmoid(N(0, 8) / 8) with E[p0] = 1/2.
  const double oracle = chi2_sigmoid_mean() - 0.5;
  SyntheticSpec s;
  s.n = 1000000;
  s.seed = 12345;
  const auto ds = gen_binary(s);
  double m = 0, m2 = 0;
  for (std::size_t i = 0; i < ds.p1.size(); ++i) {
    const double e = ds.p1[i] - ds.p0[i];
    m += e;
    m2 += e * e;
  }
  m /= s.n;
  const double se = std::sqrt((m2 / s.n - m * m) / s.n);
  CHECK(se < 1e-3);
  CHECK(std::abs(m - oracle) < 4 * se);
  CHECK(true_ate(ds) == doctest::Approx(m));
}

TEST_CASE("demand generator") {
  DemandSpec s;
  s.n = 2000;
  s.beta = 0.0;
  auto ds = gen_continuous(s);
  CHECK(ds.mode() == Mode::kContinuous);
  CHECK(ds.x.cols() == 3);
  CHECK(ds.has_truth);
  CHECK(ds.sum_c.size() == 2000);
  // beta = 0: the surface ignores the confounder.
  const Eigen::VectorXd before = ds.surface(20.0);
  for (auto& v : ds.sum_c) v += 5.0;
  CHECK(ds.surface(20.0) == before);
  // beta > 0: it does not.
  DemandSpec s1 = s;
  s1.beta = 1.0;
  auto d1 = gen_continuous(s1);
  const Eigen::VectorXd b1 = d1.surface(20.0);
  for (auto& v : d1.sum_c) v += 5.0;
  CHECK((d1.surface(20.0) - b1).cwiseAbs().minCoeff() == doctest::Approx(5.0));
  expect_equal(gen_continuous(s1), gen_continuous(s1));
  CHECK(demand_psi(25.0) == doctest::Approx(2.0 * (1.0 + 2.5 - 2.0)));
  DemandSpec bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("split sizes, disjointness and determinism") {
  SyntheticSpec s;
  s.n = 1000;
  const auto ds = gen_binary(s);
  const auto a = split(ds, {0.63, 0.27, 0.10}, 5);
  CHECK(a.train.size() == 630);
  CHECK(a.val.size() == 270);
  CHECK(a.test.size() == 100);
  const auto b = split(ds, {0.63, 0.27, 0.10}, 5);
  CHECK(a.train.x == b.train.x);
  CHECK(a.test.t == b.test.t);
  // Rows are a partition: the first covariate identifies a row.
  std::set<double> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (Index i = 0; i < part->size(); ++i) seen.insert(part->x(i, 0));
  CHECK(seen.size() == 1000);
  CHECK_THROWS_AS(split(ds, {0.5, 0.5, 0.5}, 1), ConfigError);
}

TEST_CASE("independent splits differ and derive from the dataset seed") {
  SyntheticSpec s;
  s.n = 300;
  const auto a = independent_splits(s);
  CHECK(a.train.size() == 300);
  CHECK(a.test.size() == 300);
  CHECK(a.train.x != a.test.x);
  CHECK(independent_splits(s).val.x == a.val.x);
}

TEST_CASE("dataset round trip through a directory") {
  test::TempDir dir("ds");
  SyntheticSpec s;
  s.n = 50;
  s.mv = 2;
  const auto ds = gen_binary(s);
  write_dataset(ds, dir.path() / "syn");
  expect_equal(read_dataset(dir.path() / "syn"), ds);

  DemandSpec d;
  d.n = 40;
  const auto dd = gen_continuous(d);
  write_dataset(dd, dir.path() / "demand");
  const auto back = read_dataset(dir.path() / "demand");
  expect_equal(back, dd);
  CHECK(back.surface(18.0) == dd.surface(18.0));
}

TEST_CASE("missing truth file loads without evaluation capability") {
  test::TempDir dir("ds_truth");
  SyntheticSpec s;
  s.n = 20;
  write_dataset(gen_binary(s), dir.path());
  std::filesystem::remove(dir.path() / "truth.csv");
  const auto back = read_dataset(dir.path());
  CHECK_FALSE(back.has_truth);
  CHECK(back.size() == 20);
  CHECK_THROWS_AS(true_ate(back), ConfigError);
}

TEST_CASE("header mismatch names the column") {
  test::TempDir dir("ds_header");
  SyntheticSpec s;
  s.n = 5;
  write_dataset(gen_binary(s), dir.path());
  std::string data = slurp(dir.path() / "data.csv");
  data.replace(data.find("x3"), 2, "q3");
  spit(dir.path() / "data.csv", data);
  CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("x3"), ConfigError);
  CHECK_THROWS_AS(read_dataset(dir.path() / "absent"), IoError);
}

TEST_CASE("twins transform on the shipped fixture") {
  const auto spec = fixture_spec();
  const auto ds = twins_transform(spec);
  const auto hidden = ds.spec.at("hidden_columns").get<std::vector<std::string>>();
  const auto xcols = ds.spec.at("x_columns").get<std::vector<std::string>>();
  CHECK(hidden.size() == 2);
  CHECK(xcols.size() == 6 - 2 + 6);
  CHECK(ds.x.cols() == 10);
  for (const auto& h : hidden) {
    CHECK(std::find(xcols.begin(), xcols.end(), h) == xcols.end());
    CHECK(std::find(spec.m_columns.begin(), spec.m_columns.end(), h) != spec.m_columns.end());
  }
  CHECK(ds.role_columns('a').size() == 6);
  CHECK(ds.role_columns('c').size() == 4);
  CHECK(ds.has_truth);

  // Oracle on the raw table: rows kept by the filter, heavier twin as treated.
  const auto raw = csv::read(fixture_csv());
  auto col = [&](const char* name) { return static_cast<std::size_t>(raw.column(name)); };
  std::vector<std::pair<double, double>> expected;  // (p1, p0) per kept row
  for (const auto& row : raw.rows) {
    const double w0 = std::stod(row[col("dbirwt_0")]), w1 = std::stod(row[col("dbirwt_1")]);
    if (!(w0 < 2000 && w1 < 2000) || row[col("csex_0")] != row[col("csex_1")]) continue;
    const double m0 = std::stod(row[col("mort_0")]), m1 = std::stod(row[col("mort_1")]);
    expected.emplace_back(w1 > w0 ? m1 : m0, w1 > w0 ? m0 : m1);
  }
  REQUIRE(static_cast<std::size_t>(ds.size()) == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(ds.p1[i] == expected[i].first);
    CHECK(ds.p0[i] == expected[i].second);
    if (expected[i].first == expected[i].second) CHECK(ds.p1[i] - ds.p0[i] == 0.0);
  }
  // Observed outcome is the treated twin's.
  for (Index i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    CHECK(ds.y[k] == (ds.t[k] == 1.0 ? ds.p1[k] : ds.p0[k]));
  }
  // Hidden choice follows the seed.
  CHECK(twins_transform(spec).spec["hidden_columns"] == ds.spec["hidden_columns"]);
}

TEST_CASE("twins splits follow the ratios") {
  const auto ds = twins_transform(fixture_spec());
  const auto s = split(ds, {0.63, 0.27, 0.10}, 1);
  const auto n = static_cast<double>(ds.size());
  CHECK(std::abs(s.train.size() - 0.63 * n) <= 1.0);
  CHECK(std::abs(s.val.size() - 0.27 * n) <= 1.0);
  CHECK(s.train.size() + s.val.size() + s.test.size() == ds.size());
}

TEST_CASE("twins spec validation") {
  auto s = fixture_spec();
  s.hidden = 6;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = fixture_spec();
  s.m_columns.push_back("no_such_column");
  CHECK_THROWS_WITH_AS(twins_transform(s), doctest::Contains("no_such_column"), ConfigError);
  s = fixture_spec();
  s.csv = "/nonexistent/twins.csv";
  CHECK_THROWS_AS(twins_transform(s), IoError);
  CHECK_THROWS_AS(twins_from_json({{"csv", "x.csv"}, {"m_columns", {"a"}}, {"extra", 1}}), ConfigError);
}

TEST_CASE("dataset references resolve to splits") {
  test::TempDir dir("ds_ref");
  nlohmann::json syn{{"kind", "synthetic"}, {"dims", "0-2-2-1-1"}, {"n", 40}};
  const auto a = resolve_splits(syn, 3);
  CHECK(a.train.size() == 40);
  CHECK(a.train.x.cols() == 5);
  CHECK(resolve_input_dim(syn) == 5);
  CHECK(resolve_splits(syn, 3).train.x == a.train.x);
  CHECK(resolve_splits(syn, 4).train.x != a.train.x);

  write_dataset(a.train, dir.path() / "flat");
  const auto flat = resolve_splits({{"path", (dir.path() / "flat").string()}}, 0);
  CHECK(flat.train.size() + flat.val.size() + flat.test.size() == 40);

  write_dataset(a.train, dir.path() / "parts" / "train");
  write_dataset(a.val, dir.path() / "parts" / "val");
  write_dataset(a.test, dir.path() / "parts" / "test");
  const auto parts = resolve_splits({{"path", (dir.path() / "parts").string()}}, 99);
  CHECK(parts.test.x == a.test.x);
  CHECK(resolve_input_dim({{"path", (dir.path() / "parts").string()}}) == 5);

  CHECK_THROWS_AS(resolve_splits({{"kind", "imaginary"}}, 0), ConfigError);
  CHECK_THROWS_AS(resolve_splits({{"path", (dir.path() / "absent").string()}}, 0), IoError);
}

TEST_CASE("csv reader") {
  test::TempDir dir("csv");
  spit(dir.path() / "a.csv", "a,b,c\n1,\"x,y\",3\n4,,NA\n");
  const auto t = csv::read(dir.path() / "a.csv");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  CHECK(t.rows[0][1] == "x,y");
  CHECK(std::isnan(csv::to_double(t.rows[1][1], "b")));
  CHECK(std::isnan(csv::to_double(t.rows[1][2], "c")));
  CHECK(t.column("c") == 2);
  CHECK(t.column("d") == -1);
  CHECK_THROWS_AS(csv::to_double("abc", "field"), ConfigError);
  spit(dir.path() / "ragged.csv", "a,b\n1,2,3\n");
  CHECK_THROWS_AS(csv::read(dir.path() / "ragged.csv"), ConfigError);
  CHECK(csv::to_double(csv::format(0.1 + 0.2), "x") == 0.1 + 0.2);
}
