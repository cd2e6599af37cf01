#include "sd2/datagen.hpp"

#include "sd2/csv.hpp"
#include "sd2/errors.hpp"
#include "sd2/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sd2::data {
namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

template <class T>
T field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("spec.") + key + ": wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = key == "kind";
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + "." + key + ": unknown field");
  }
}

std::vector<double> column_values(const csv::Table& t, long col, const std::string& name) {
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out.push_back(csv::to_double(t.rows[r][static_cast<std::size_t>(col)], name + " row " + std::to_string(r + 1)));
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failure on " + path.string());
}

void expect_header(const csv::Table& t, const std::vector<std::string>& want, const std::string& file) {
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (i >= t.header.size()) throw ConfigError(file + ": missing column '" + want[i] + "'");
    if (t.header[i] != want[i]) {
      throw ConfigError(file + ": expected column '" + want[i] + "' at position " + std::to_string(i) + ", found '" +
                        t.header[i] + "'");
    }
  }
  if (t.header.size() > want.size()) {
    throw ConfigError(file + ": unexpected column '" + t.header[want.size()] + "'");
  }
}

}  // namespace

// ---- Specs ------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  require(mv >= 0 && mz >= 0 && mc >= 0 && ma >= 0 && mu >= 0, "synthetic spec: dimensions must be non-negative");
  require(mz + mc + ma >= 1, "synthetic spec: mz + mc + ma must be at least 1");
  require(n >= 1, "synthetic spec: n must be at least 1");
}

std::string SyntheticSpec::name() const {
  std::ostringstream s;
  s << "Syn-" << mv << '-' << mz << '-' << mc << '-' << ma << '-' << mu;
  return s.str();
}

SyntheticSpec SyntheticSpec::parse(const std::string& dims, long n, std::uint64_t seed) {
  std::string body = dims.rfind("Syn-", 0) == 0 ? dims.substr(4) : dims;
  std::vector<int> parts;
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("synthetic spec '" + dims + "': '" + tok + "' is not an integer");
    }
  }
  if (parts.size() != 5) throw ConfigError("synthetic spec '" + dims + "': expected mv-mz-mc-ma-mu");
  SyntheticSpec s{parts[0], parts[1], parts[2], parts[3], parts[4], n, seed};
  s.validate();
  return s;
}

void DemandSpec::validate() const {
  require(std::isfinite(alpha) && alpha >= 0.0, "demand spec: alpha must be >= 0");
  require(std::isfinite(beta) && beta >= 0.0, "demand spec: beta must be >= 0");
  require(mz >= 1 && mc >= 1 && ma >= 1, "demand spec: mz, mc, ma must be >= 1");
  require(n >= 1, "demand spec: n must be at least 1");
}

std::string DemandSpec::name() const {
  std::ostringstream s;
  s << "Demand-" << alpha << '-' << beta;
  return s.str();
}

void TwinsSpec::validate() const {
  require(!m_columns.empty(), "twins spec: no M columns");
  require(hidden >= 0 && hidden < static_cast<int>(m_columns.size()),
          "twins spec: hidden count must be below the number of M columns");
  require(mv >= 0, "twins spec: mv must be non-negative");
  double total = 0.0;
  for (double r : ratios) {
    require(r > 0.0, "twins spec: split ratios must be positive");
    total += r;
  }
  require(std::abs(total - 1.0) < 1e-9, "twins spec: split ratios must sum to 1");
}

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSynthetic:
      return "synthetic";
    case DatasetKind::kDemand:
      return "demand";
    case DatasetKind::kTwins:
      return "twins";
  }
  return "synthetic";
}

DatasetKind kind_from_string(const std::string& s) {
  if (s == "synthetic") return DatasetKind::kSynthetic;
  if (s == "demand") return DatasetKind::kDemand;
  if (s == "twins") return DatasetKind::kTwins;
  throw ConfigError("dataset kind: expected synthetic, demand or twins, got '" + s + "'");
}

json to_json(const SyntheticSpec& s) {
  return {{"kind", "synthetic"}, {"mv", s.mv}, {"mz", s.mz}, {"mc", s.mc}, {"ma", s.ma},
          {"mu", s.mu},          {"n", s.n},   {"seed", s.seed}};
}

json to_json(const DemandSpec& s) {
  return {{"kind", "demand"}, {"alpha", s.alpha}, {"beta", s.beta}, {"mz", s.mz},
          {"mc", s.mc},       {"ma", s.ma},       {"n", s.n},       {"seed", s.seed}};
}

json to_json(const TwinsSpec& s) {
  return {{"kind", "twins"},
          {"csv", s.csv.string()},
          {"m_columns", s.m_columns},
          {"r_columns", s.r_columns},
          {"hidden", s.hidden},
          {"mv", s.mv},
          {"seed", s.seed},
          {"ratios", s.ratios},
          {"outcome_columns", s.outcome_columns},
          {"filter",
           {{"weight_columns", s.filter.weight_columns},
            {"max_weight", s.filter.max_weight},
            {"sex_columns", s.filter.sex_columns},
            {"same_sex", s.filter.same_sex}}}};
}

SyntheticSpec synthetic_from_json(const json& j) {
  require(j.is_object(), "synthetic spec: expected an object");
  reject_unknown(j, {"mv", "mz", "mc", "ma", "mu", "n", "seed", "dims"}, "spec");
  SyntheticSpec s;
  if (j.contains("dims")) {
    s = SyntheticSpec::parse(field<std::string>(j, "dims", ""), s.n, s.seed);
  }
  s.mv = field(j, "mv", s.mv);
  s.mz = field(j, "mz", s.mz);
  s.mc = field(j, "mc", s.mc);
  s.ma = field(j, "ma", s.ma);
  s.mu = field(j, "mu", s.mu);
  s.n = field(j, "n", s.n);
  s.seed = field(j, "seed", s.seed);
  s.validate();
  return s;
}

DemandSpec demand_from_json(const json& j) {
  require(j.is_object(), "demand spec: expected an object");
  reject_unknown(j, {"alpha", "beta", "mz", "mc", "ma", "n", "seed"}, "spec");
  DemandSpec s;
  s.alpha = field(j, "alpha", s.alpha);
  s.beta = field(j, "beta", s.beta);
  s.mz = field(j, "mz", s.mz);
  s.mc = field(j, "mc", s.mc);
  s.ma = field(j, "ma", s.ma);
  s.n = field(j, "n", s.n);
  s.seed = field(j, "seed", s.seed);
  s.validate();
  return s;
}

TwinsSpec twins_from_json(const json& j) {
  require(j.is_object(), "twins spec: expected an object");
  reject_unknown(j, {"csv", "m_columns", "r_columns", "hidden", "mv", "seed", "ratios", "outcome_columns", "filter"},
                 "spec");
  TwinsSpec s;
  s.csv = field<std::string>(j, "csv", "");
  s.m_columns = field(j, "m_columns", s.m_columns);
  s.r_columns = field(j, "r_columns", s.r_columns);
  s.hidden = field(j, "hidden", s.hidden);
  s.mv = field(j, "mv", s.mv);
  s.seed = field(j, "seed", s.seed);
  s.ratios = field(j, "ratios", s.ratios);
  s.outcome_columns = field(j, "outcome_columns", s.outcome_columns);
  if (j.contains("filter")) {
    const json& f = j["filter"];
    reject_unknown(f, {"weight_columns", "max_weight", "sex_columns", "same_sex"}, "spec.filter");
    s.filter.weight_columns = field(f, "weight_columns", s.filter.weight_columns);
    s.filter.max_weight = field(f, "max_weight", s.filter.max_weight);
    s.filter.sex_columns = field(f, "sex_columns", s.filter.sex_columns);
    s.filter.same_sex = field(f, "same_sex", s.filter.same_sex);
  }
  s.validate();
  return s;
}

// ---- Dataset ----------------------------------------------------------------------

std::vector<Index> GeneratedDataset::role_columns(char role) const {
  std::vector<Index> out;
  for (std::size_t j = 0; j < roles.size(); ++j) {
    if (roles[j] == role) out.push_back(static_cast<Index>(j));
  }
  return out;
}

double demand_psi(double t) {
  const double d = t - 25.0;
  return 2.0 * (d * d * d * d / 6000.0 + std::exp(-d * d / 10.0) + t / 10.0 - 2.0);
}

double GeneratedDataset::surface(Index i, double t_do) const {
  if (kind != DatasetKind::kDemand || !has_truth) throw ConfigError("dataset has no counterfactual surface");
  const auto k = static_cast<std::size_t>(i);
  return demand_psi(t_do) * (1.0 + 0.5 * sum_a[k]) - 2.0 * t_do + demand_beta * sum_c[k];
}

Eigen::VectorXd GeneratedDataset::surface(double t_do) const {
  Eigen::VectorXd out(size());
  for (Index i = 0; i < size(); ++i) out(i) = surface(i, t_do);
  return out;
}

GeneratedDataset GeneratedDataset::subset(std::span<const Index> rows) const {
  GeneratedDataset out;
  out.kind = kind;
  out.roles = roles;
  out.has_truth = has_truth;
  out.demand_beta = demand_beta;
  out.spec = spec;
  const auto m = static_cast<Index>(rows.size());
  out.x.resize(m, x.cols());
  out.v.resize(m, v.cols());
  out.u.resize(has_truth ? m : 0, u.cols());
  auto pick = [&rows](const std::vector<double>& src) {
    std::vector<double> dst;
    if (src.empty()) return dst;
    dst.reserve(rows.size());
    for (Index r : rows) dst.push_back(src[static_cast<std::size_t>(r)]);
    return dst;
  };
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= size()) throw DimensionError("subset: row index out of range");
    out.x.row(i) = x.row(r);
    out.v.row(i) = v.row(r);
    if (has_truth && u.rows() > 0) out.u.row(i) = u.row(r);
  }
  out.t = pick(t);
  out.y = pick(y);
  out.p1 = pick(p1);
  out.p0 = pick(p0);
  out.sum_a = pick(sum_a);
  out.sum_c = pick(sum_c);
  return out;
}

void GeneratedDataset::validate() const {
  const Index n = size();
  require(static_cast<Index>(y.size()) == n, "dataset: t and y lengths differ");
  require(x.rows() == n && v.rows() == n, "dataset: x or v row count differs from n");
  require(static_cast<Index>(roles.size()) == x.cols(), "dataset: one role label per column of x is required");
  for (char r : roles) require(r == 'z' || r == 'c' || r == 'a', "dataset: role labels must be z, c or a");
  require(x.allFinite() && v.allFinite(), "dataset: non-finite covariate");
  const bool binary = mode() == Mode::kBinary;
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    require(std::isfinite(t[k]) && std::isfinite(y[k]), "dataset: non-finite t or y at row " + std::to_string(i));
    if (binary) {
      require(t[k] == 0.0 || t[k] == 1.0, "dataset: binary t must be 0 or 1 (row " + std::to_string(i) + ")");
      require(y[k] == 0.0 || y[k] == 1.0, "dataset: binary y must be 0 or 1 (row " + std::to_string(i) + ")");
    }
  }
  if (!has_truth) return;
  require(u.rows() == n || u.cols() == 0, "dataset: latent row count differs from n");
  if (binary) {
    require(static_cast<Index>(p1.size()) == n && static_cast<Index>(p0.size()) == n,
            "dataset: p1/p0 lengths differ from n");
    for (std::size_t k = 0; k < p1.size(); ++k) {
      require(p1[k] >= 0.0 && p1[k] <= 1.0 && p0[k] >= 0.0 && p0[k] <= 1.0, "dataset: p1/p0 outside [0, 1]");
    }
  } else {
    require(static_cast<Index>(sum_a.size()) == n && static_cast<Index>(sum_c.size()) == n,
            "dataset: surface parameter lengths differ from n");
  }
}

// ---- Generators ---------------------------------------------------------------------

GeneratedDataset gen_binary(const SyntheticSpec& spec) {
  spec.validate();
  const Index n = spec.n;
  const int d = spec.mz + spec.mc + spec.ma;
  const int width = d + spec.mu + spec.mv;
  const CounterRng latent(spec.seed, "gen_binary:latent");
  const CounterRng t_rng(spec.seed, "gen_binary:t");
  const CounterRng y_rng(spec.seed, "gen_binary:y");
  const double denom = spec.ma + spec.mc + spec.mu;

  GeneratedDataset ds;
  ds.kind = DatasetKind::kSynthetic;
  ds.has_truth = true;
  ds.spec = to_json(spec);
  ds.x.resize(n, d);
  ds.v.resize(n, spec.mv);
  ds.u.resize(n, spec.mu);
  ds.t.resize(static_cast<std::size_t>(n));
  ds.y.resize(static_cast<std::size_t>(n));
  ds.p1.resize(static_cast<std::size_t>(n));
  ds.p0.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < spec.mz; ++j) ds.roles.push_back('z');
  for (int j = 0; j < spec.mc; ++j) ds.roles.push_back('c');
  for (int j = 0; j < spec.ma; ++j) ds.roles.push_back('a');

  for (Index i = 0; i < n; ++i) {
    const auto base = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(width);
    for (int j = 0; j < d; ++j) ds.x(i, j) = latent.normal(base + static_cast<std::uint64_t>(j));
    for (int j = 0; j < spec.mu; ++j) ds.u(i, j) = latent.normal(base + static_cast<std::uint64_t>(d + j));
    for (int j = 0; j < spec.mv; ++j) {
      ds.v(i, j) = latent.normal(base + static_cast<std::uint64_t>(d + spec.mu + j));
    }
    const double sz = ds.x.row(i).segment(0, spec.mz).sum();
    const double sc = ds.x.row(i).segment(spec.mz, spec.mc).sum();
    const double sc2 = ds.x.row(i).segment(spec.mz, spec.mc).squaredNorm();
    const double sa = ds.x.row(i).segment(spec.mz + spec.mc, spec.ma).sum();
    const double sa2 = ds.x.row(i).segment(spec.mz + spec.mc, spec.ma).squaredNorm();
    const double su = ds.u.row(i).sum();
    const double su2 = ds.u.row(i).squaredNorm();
    const double sv = ds.v.row(i).sum();

    const double pt = sigmoid(sz + sc + sv + su);
    const auto k = static_cast<std::size_t>(i);
    ds.t[k] = t_rng.uniform(static_cast<std::uint64_t>(i)) < pt ? 1.0 : 0.0;
    ds.p1[k] = denom > 0 ? sigmoid((sa2 + sc2 + su2) / denom) : 0.5;
    ds.p0[k] = denom > 0 ? sigmoid((sa + sc + su) / denom) : 0.5;
    const double py = ds.t[k] == 1.0 ? ds.p1[k] : ds.p0[k];
    ds.y[k] = y_rng.uniform(static_cast<std::uint64_t>(i)) < py ? 1.0 : 0.0;
  }
  return ds;
}

GeneratedDataset gen_continuous(const DemandSpec& spec) {
  spec.validate();
  const Index n = spec.n;
  const int d = spec.mz + spec.mc + spec.ma;
  const int width = d + 3;  // covariates, u, eps_t, eps_y
  const CounterRng rng(spec.seed, "gen_continuous");

  GeneratedDataset ds;
  ds.kind = DatasetKind::kDemand;
  ds.has_truth = true;
  ds.demand_beta = spec.beta;
  ds.spec = to_json(spec);
  ds.x.resize(n, d);
  ds.v.resize(n, 0);
  ds.u.resize(n, 1);
  ds.t.resize(static_cast<std::size_t>(n));
  ds.y.resize(static_cast<std::size_t>(n));
  ds.sum_a.resize(static_cast<std::size_t>(n));
  ds.sum_c.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < spec.mz; ++j) ds.roles.push_back('z');
  for (int j = 0; j < spec.mc; ++j) ds.roles.push_back('c');
  for (int j = 0; j < spec.ma; ++j) ds.roles.push_back('a');

  for (Index i = 0; i < n; ++i) {
    const auto base = static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(width);
    for (int j = 0; j < d; ++j) ds.x(i, j) = rng.normal(base + static_cast<std::uint64_t>(j));
    const double u = rng.normal(base + static_cast<std::uint64_t>(d));
    const double eps_t = rng.normal(base + static_cast<std::uint64_t>(d + 1));
    const double eps_y = rng.normal(base + static_cast<std::uint64_t>(d + 2));
    ds.u(i, 0) = u;
    const double sz = ds.x.row(i).segment(0, spec.mz).sum();
    const double sc = ds.x.row(i).segment(spec.mz, spec.mc).sum();
    const double sa = ds.x.row(i).segment(spec.mz + spec.mc, spec.ma).sum();
    const auto k = static_cast<std::size_t>(i);
    const double t = 25.0 + (1.0 + spec.alpha) * sz + sc + u + eps_t;
    ds.t[k] = t;
    ds.y[k] = demand_psi(t) * (1.0 + 0.5 * sa) - 2.0 * t + spec.beta * sc + 2.0 * u + eps_y;
    ds.sum_a[k] = sa;
    ds.sum_c[k] = sc;
  }
  return ds;
}

GeneratedDataset twins_transform(const TwinsSpec& spec) {
  spec.validate();
  const csv::Table table = csv::read(spec.csv);
  auto need = [&table](const std::string& name) {
    const long c = table.column(name);
    if (c < 0) throw ConfigError("twins csv: missing designated column '" + name + "'");
    return c;
  };
  std::vector<long> m_cols, r_cols;
  for (const auto& name : spec.m_columns) m_cols.push_back(need(name));
  for (const auto& name : spec.r_columns) r_cols.push_back(need(name));
  const long out0 = need(spec.outcome_columns[0]);
  const long out1 = need(spec.outcome_columns[1]);
  const long w0 = table.column(spec.filter.weight_columns[0]);
  const long w1 = table.column(spec.filter.weight_columns[1]);
  if (w0 < 0 || w1 < 0) throw ConfigError("twins csv: missing birth-weight columns for treatment assignment");
  const long s0 = table.column(spec.filter.sex_columns[0]);
  const long s1 = table.column(spec.filter.sex_columns[1]);

  auto num = [&](std::size_t row, long col) {
    return csv::to_double(table.rows[row][static_cast<std::size_t>(col)],
                          "twins csv column '" + table.header[static_cast<std::size_t>(col)] + "' row " +
                              std::to_string(row + 1));
  };

  // Rows passing the predicates with every used field present.
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double wa = num(r, w0), wb = num(r, w1);
    if (std::isnan(wa) || std::isnan(wb)) continue;
    if (!(wa < spec.filter.max_weight && wb < spec.filter.max_weight)) continue;
    if (spec.filter.same_sex && s0 >= 0 && s1 >= 0 && num(r, s0) != num(r, s1)) continue;
    bool complete = !std::isnan(num(r, out0)) && !std::isnan(num(r, out1));
    for (long c : m_cols) complete = complete && !std::isnan(num(r, c));
    for (long c : r_cols) complete = complete && !std::isnan(num(r, c));
    if (complete) keep.push_back(r);
  }
  if (keep.empty()) throw ConfigError("twins csv: no rows pass the filters");
  const auto n = static_cast<Index>(keep.size());

  // Standardised M block drives treatment; a seeded subset of it is hidden.
  Tensor m(n, static_cast<Index>(m_cols.size()));
  for (Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m_cols.size(); ++j) m(i, static_cast<Index>(j)) = num(keep[static_cast<std::size_t>(i)], m_cols[j]);
  }
  for (Index j = 0; j < m.cols(); ++j) {
    const double mu = m.col(j).mean();
    const double sd = std::sqrt((m.col(j).array() - mu).square().mean());
    m.col(j).array() -= mu;
    if (sd > 1e-12) m.col(j) /= sd;
  }
  std::vector<std::size_t> order(m_cols.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream hide_rng(spec.seed, "twins:hidden");
  hide_rng.shuffle(order);
  std::vector<bool> hidden(m_cols.size(), false);
  for (int h = 0; h < spec.hidden; ++h) hidden[order[static_cast<std::size_t>(h)]] = true;

  GeneratedDataset ds;
  ds.kind = DatasetKind::kTwins;
  ds.has_truth = true;
  ds.spec = to_json(spec);
  json hidden_names = json::array(), x_names = json::array();
  const Index d = static_cast<Index>(m_cols.size()) - spec.hidden + static_cast<Index>(r_cols.size());
  ds.x.resize(n, d);
  ds.u.resize(n, spec.hidden);
  ds.v.resize(n, spec.mv);
  const CounterRng v_rng(spec.seed, "twins:v");
  const CounterRng t_rng(spec.seed, "twins:t");
  for (std::size_t j = 0; j < m_cols.size(); ++j) {
    (hidden[j] ? hidden_names : x_names).push_back(spec.m_columns[j]);
    if (!hidden[j]) ds.roles.push_back('c');
  }
  for (const auto& name : spec.r_columns) {
    x_names.push_back(name);
    ds.roles.push_back('a');
  }
  ds.spec["hidden_columns"] = hidden_names;
  ds.spec["x_columns"] = x_names;

  for (Index i = 0; i < n; ++i) {
    const std::size_t r = keep[static_cast<std::size_t>(i)];
    Index xc = 0, uc = 0;
    for (std::size_t j = 0; j < m_cols.size(); ++j) {
      if (hidden[j]) ds.u(i, uc++) = m(i, static_cast<Index>(j));
      else ds.x(i, xc++) = num(r, m_cols[j]);
    }
    for (long c : r_cols) ds.x(i, xc++) = num(r, c);
    for (int j = 0; j < spec.mv; ++j) {
      ds.v(i, j) = v_rng.normal(static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(spec.mv) +
                                static_cast<std::uint64_t>(j));
    }
    const double pt = sigmoid(m.row(i).sum() + ds.v.row(i).sum());
    const double t = t_rng.uniform(static_cast<std::uint64_t>(i)) < pt ? 1.0 : 0.0;
    // Heavier twin is the treated unit; ties go to twin 0.
    const bool first_heavier = num(r, w0) >= num(r, w1);
    const double y_heavy = num(r, first_heavier ? out0 : out1);
    const double y_light = num(r, first_heavier ? out1 : out0);
    if ((y_heavy != 0.0 && y_heavy != 1.0) || (y_light != 0.0 && y_light != 1.0)) {
      throw ConfigError("twins csv: outcome columns must hold 0 or 1 (row " + std::to_string(r + 1) + ")");
    }
    ds.t.push_back(t);
    ds.p1.push_back(y_heavy);
    ds.p0.push_back(y_light);
    ds.y.push_back(t == 1.0 ? y_heavy : y_light);
  }
  ds.validate();
  return ds;
}

double true_ate(const GeneratedDataset& ds) {
  if (!ds.has_truth || ds.mode() != Mode::kBinary) throw ConfigError("true_ate: dataset has no binary ground truth");
  if (ds.p1.empty()) throw ConfigError("true_ate: empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < ds.p1.size(); ++i) s += ds.p1[i] - ds.p0[i];
  return s / static_cast<double>(ds.p1.size());
}

// ---- Splits ------------------------------------------------------------------------------

Splits split(const GeneratedDataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");
  const Index n = ds.size();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  RngStream rng(seed, "split");
  rng.shuffle(perm);
  const auto a = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  const auto b = std::min(perm.size(), static_cast<std::size_t>(std::llround((ratios[0] + ratios[1]) * static_cast<double>(n))));
  auto part = [&perm](std::size_t lo, std::size_t hi) {
    std::vector<Index> rows(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  Splits s;
  s.train = ds.subset(part(0, a));
  s.val = ds.subset(part(a, b));
  s.test = ds.subset(part(b, perm.size()));
  return s;
}

Splits independent_splits(const SyntheticSpec& spec) {
  auto with_seed = [&spec](const char* tag) {
    SyntheticSpec s = spec;
    s.seed = derive_seed(spec.seed, tag);
    GeneratedDataset ds = gen_binary(s);
    ds.spec = to_json(spec);
    ds.spec["part"] = tag;
    return ds;
  };
  return {with_seed("train"), with_seed("val"), with_seed("test")};
}

Splits independent_splits(const DemandSpec& spec) {
  auto with_seed = [&spec](const char* tag) {
    DemandSpec s = spec;
    s.seed = derive_seed(spec.seed, tag);
    GeneratedDataset ds = gen_continuous(s);
    ds.spec = to_json(spec);
    ds.spec["part"] = tag;
    return ds;
  };
  return {with_seed("train"), with_seed("val"), with_seed("test")};
}

// ---- Serialization ---------------------------------------------------------------------------

namespace {

std::vector<std::string> data_header(Index d, Index mv) {
  std::vector<std::string> h;
  for (Index j = 0; j < d; ++j) h.push_back("x" + std::to_string(j));
  for (Index j = 0; j < mv; ++j) h.push_back("v" + std::to_string(j));
  h.push_back("t");
  h.push_back("y");
  return h;
}

std::vector<std::string> truth_header(const GeneratedDataset& ds) {
  std::vector<std::string> h;
  if (ds.mode() == Mode::kBinary) {
    h = {"p1", "p0"};
  } else {
    h = {"sum_a", "sum_c"};
  }
  for (Index j = 0; j < ds.u.cols(); ++j) h.push_back("u" + std::to_string(j));
  return h;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += v[i];
  }
  return out + '\n';
}

}  // namespace

void write_dataset(const GeneratedDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::string data = join(data_header(ds.x.cols(), ds.v.cols()));
  for (Index i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    for (Index j = 0; j < ds.x.cols(); ++j) data += csv::format(ds.x(i, j)) + ',';
    for (Index j = 0; j < ds.v.cols(); ++j) data += csv::format(ds.v(i, j)) + ',';
    data += csv::format(ds.t[k]) + ',' + csv::format(ds.y[k]) + '\n';
  }
  write_text(dir / "data.csv", data);

  std::string roles = "column,role\n";
  for (std::size_t j = 0; j < ds.roles.size(); ++j) roles += "x" + std::to_string(j) + ',' + ds.roles[j] + '\n';
  write_text(dir / "roles.csv", roles);

  std::filesystem::remove(dir / "truth.csv", ec);
  if (ds.has_truth) {
    const bool binary = ds.mode() == Mode::kBinary;
    std::string truth = join(truth_header(ds));
    for (Index i = 0; i < ds.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      truth += binary ? csv::format(ds.p1[k]) + ',' + csv::format(ds.p0[k])
                      : csv::format(ds.sum_a[k]) + ',' + csv::format(ds.sum_c[k]);
      for (Index j = 0; j < ds.u.cols(); ++j) truth += ',' + csv::format(ds.u(i, j));
      truth += '\n';
    }
    write_text(dir / "truth.csv", truth);
  }

  json spec = ds.spec;
  if (!spec.is_object()) spec = json::object();
  spec["kind"] = to_string(ds.kind);
  write_text(dir / "spec.json", spec.dump(2) + '\n');
}

GeneratedDataset read_dataset(const std::filesystem::path& dir) {
  GeneratedDataset ds;
  {
    std::ifstream in(dir / "spec.json");
    if (!in) throw IoError("cannot open " + (dir / "spec.json").string());
    try {
      ds.spec = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("spec.json: " + std::string(e.what()));
    }
  }
  if (!ds.spec.is_object() || !ds.spec.contains("kind") || !ds.spec["kind"].is_string()) {
    throw ConfigError("spec.json: missing field 'kind'");
  }
  ds.kind = kind_from_string(ds.spec["kind"].get<std::string>());
  if (ds.kind == DatasetKind::kDemand) ds.demand_beta = field(ds.spec, "beta", 0.0);

  const csv::Table roles = csv::read(dir / "roles.csv");
  expect_header(roles, {"column", "role"}, "roles.csv");
  for (std::size_t j = 0; j < roles.rows.size(); ++j) {
    const auto& row = roles.rows[j];
    if (row[0] != "x" + std::to_string(j)) {
      throw ConfigError("roles.csv: expected column 'x" + std::to_string(j) + "', found '" + row[0] + "'");
    }
    if (row[1].size() != 1) throw ConfigError("roles.csv: role for '" + row[0] + "' must be z, c or a");
    ds.roles.push_back(row[1][0]);
  }
  const auto d = static_cast<Index>(ds.roles.size());

  const csv::Table data = csv::read(dir / "data.csv");
  Index mv = 0;
  while (data.column("v" + std::to_string(mv)) >= 0) ++mv;
  expect_header(data, data_header(d, mv), "data.csv");
  const auto n = static_cast<Index>(data.rows.size());
  ds.x.resize(n, d);
  ds.v.resize(n, mv);
  for (Index i = 0; i < n; ++i) {
    const auto& row = data.rows[static_cast<std::size_t>(i)];
    auto at = [&](Index c) {
      return csv::to_double(row[static_cast<std::size_t>(c)],
                            "data.csv column '" + data.header[static_cast<std::size_t>(c)] + "' row " +
                                std::to_string(i + 1));
    };
    for (Index j = 0; j < d; ++j) ds.x(i, j) = at(j);
    for (Index j = 0; j < mv; ++j) ds.v(i, j) = at(d + j);
    ds.t.push_back(at(d + mv));
    ds.y.push_back(at(d + mv + 1));
  }

  const auto truth_path = dir / "truth.csv";
  ds.has_truth = std::filesystem::exists(truth_path);
  ds.u.resize(0, 0);
  if (ds.has_truth) {
    const csv::Table truth = csv::read(truth_path);
    if (static_cast<Index>(truth.rows.size()) != n) {
      throw ConfigError("truth.csv: " + std::to_string(truth.rows.size()) + " rows, data.csv has " + std::to_string(n));
    }
    Index mu = 0;
    while (truth.column("u" + std::to_string(mu)) >= 0) ++mu;
    ds.u.resize(n, mu);
    expect_header(truth, truth_header(ds), "truth.csv");
    const bool binary = ds.mode() == Mode::kBinary;
    auto& first = binary ? ds.p1 : ds.sum_a;
    auto& second = binary ? ds.p0 : ds.sum_c;
    first = column_values(truth, 0, "truth.csv column '" + truth.header[0] + "'");
    second = column_values(truth, 1, "truth.csv column '" + truth.header[1] + "'");
    for (Index j = 0; j < mu; ++j) {
      const auto col = column_values(truth, 2 + j, "truth.csv column 'u" + std::to_string(j) + "'");
      for (Index i = 0; i < n; ++i) ds.u(i, j) = col[static_cast<std::size_t>(i)];
    }
  }
  ds.validate();
  return ds;
}

// ---- Dataset references ------------------------------------------------------------------

namespace {

bool is_split_dir(const std::filesystem::path& dir) {
  return std::filesystem::is_directory(dir / "train") && std::filesystem::is_directory(dir / "val") &&
         std::filesystem::is_directory(dir / "test");
}

}  // namespace

Splits resolve_splits(const json& ref, std::uint64_t seed) {
  if (!ref.is_object()) throw ConfigError("dataset: expected an object");
  if (ref.contains("path")) {
    if (ref.size() != 1) throw ConfigError("dataset: 'path' cannot be combined with other fields");
    const std::filesystem::path dir = field<std::string>(ref, "path", "");
    if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    if (is_split_dir(dir)) return {read_dataset(dir / "train"), read_dataset(dir / "val"), read_dataset(dir / "test")};
    return split(read_dataset(dir), {0.63, 0.27, 0.10}, seed);
  }
  if (!ref.contains("kind")) throw ConfigError("dataset: needs 'kind' or 'path'");
  const DatasetKind kind = kind_from_string(field<std::string>(ref, "kind", ""));
  switch (kind) {
    case DatasetKind::kSynthetic: {
      SyntheticSpec s = synthetic_from_json(ref);
      s.seed = seed;
      return independent_splits(s);
    }
    case DatasetKind::kDemand: {
      DemandSpec s = demand_from_json(ref);
      s.seed = seed;
      return independent_splits(s);
    }
    case DatasetKind::kTwins: {
      TwinsSpec s = twins_from_json(ref);
      const GeneratedDataset ds = twins_transform(s);
      return split(ds, s.ratios, seed);
    }
  }
  throw ConfigError("dataset: unknown kind");
}

int resolve_input_dim(const json& ref) {
  if (!ref.is_object()) throw ConfigError("dataset: expected an object");
  if (ref.contains("path")) {
    std::filesystem::path dir = field<std::string>(ref, "path", "");
    if (is_split_dir(dir)) dir /= "train";
    const csv::Table roles = csv::read(dir / "roles.csv");
    return static_cast<int>(roles.rows.size());
  }
  const DatasetKind kind = kind_from_string(field<std::string>(ref, "kind", ""));
  if (kind == DatasetKind::kSynthetic) {
    const SyntheticSpec s = synthetic_from_json(ref);
    return s.mz + s.mc + s.ma;
  }
  if (kind == DatasetKind::kDemand) {
    const DemandSpec s = demand_from_json(ref);
    return s.mz + s.mc + s.ma;
  }
  const TwinsSpec s = twins_from_json(ref);
  return static_cast<int>(s.m_columns.size() + s.r_columns.size()) - s.hidden;
}

}  // namespace sd2::data
