#include "sd2/evaluation.hpp"

#include "sd2/csv.hpp"
#include "sd2/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace sd2::eval {
namespace {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failure on " + path.string());
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Linear interpolation between order statistics.
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double eps_ate(std::span<const double> p1, std::span<const double> p0, std::span<const double> g1,
               std::span<const double> g0) {
  const std::size_t n = p1.size();
  if (n == 0) throw ConfigError("eps_ate: empty dataset");
  if (p0.size() != n || g1.size() != n || g0.size() != n) throw DimensionError("eps_ate: length mismatch");
  double truth = 0.0, pred = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    truth += p1[i] - p0[i];
    pred += g1[i] - g0[i];
  }
  return std::abs(truth - pred) / static_cast<double>(n);
}

double eps_ate(const Sd2Model& model, const data::GeneratedDataset& ds) {
  if (ds.mode() != Mode::kBinary || model.config().mode != Mode::kBinary) {
    throw ConfigError("eps_ate needs a binary dataset and model");
  }
  if (!ds.has_truth) throw ConfigError("eps_ate: dataset has no ground truth");
  const Eigen::VectorXd g1 = model.predict_outcome(ds.x, 1.0);
  const Eigen::VectorXd g0 = model.predict_outcome(ds.x, 0.0);
  return eps_ate(ds.p1, ds.p0, as_span(g1), as_span(g0));
}

std::vector<double> default_grid(const data::GeneratedDataset& ds, int points, double coverage) {
  if (points < 1) throw ConfigError("grid: need at least one point");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw ConfigError("grid: coverage must lie in (0, 1]");
  if (ds.t.empty()) throw ConfigError("grid: empty dataset");
  const double tail = (1.0 - coverage) / 2.0;
  const double lo = quantile(ds.t, tail);
  const double hi = quantile(ds.t, 1.0 - tail);
  if (points == 1) return {0.5 * (lo + hi)};
  std::vector<double> grid;
  for (int i = 0; i < points; ++i) grid.push_back(lo + (hi - lo) * i / (points - 1));
  return grid;
}

double counterfactual_mse(const Sd2Model& model, const data::GeneratedDataset& ds, std::span<const double> grid) {
  if (ds.mode() != Mode::kContinuous || model.config().mode != Mode::kContinuous) {
    throw ConfigError("counterfactual_mse needs a continuous dataset and model");
  }
  if (!ds.has_truth) throw ConfigError("counterfactual_mse: dataset has no counterfactual surface");
  if (grid.empty()) throw ConfigError("counterfactual_mse: empty grid");
  if (ds.size() == 0) throw ConfigError("counterfactual_mse: empty dataset");
  double total = 0.0;
  for (double t : grid) total += (model.predict_outcome(ds.x, t) - ds.surface(t)).squaredNorm();
  return total / (static_cast<double>(grid.size()) * static_cast<double>(ds.size()));
}

double FactorAttribution::ratio() const {
  return other_slice > 0.0 ? true_slice / other_slice : std::numeric_limits<double>::infinity();
}

const FactorAttribution& AttributionReport::at(char factor) const {
  for (const auto& f : factors) {
    if (f.factor == factor) return f;
  }
  throw ConfigError(std::string("attribution: no factor '") + factor + "'");
}

AttributionReport attribution(const Sd2Model& model, std::span<const char> roles) {
  if (roles.empty()) throw ConfigError("attribution: role labels missing");
  if (static_cast<int>(roles.size()) != model.config().input_dim) {
    throw DimensionError("attribution: " + std::to_string(roles.size()) + " role labels for input_dim " +
                         std::to_string(model.config().input_dim));
  }
  AttributionReport report;
  const char order[3] = {'z', 'c', 'a'};
  for (int k = 0; k < 3; ++k) {
    const char f = order[k];
    // Rows of the first weight matrix index input columns.
    const Tensor& w = model.first_layer_weight(f);
    double in_sum = 0.0, out_sum = 0.0;
    Index in_n = 0, out_n = 0;
    for (std::size_t j = 0; j < roles.size(); ++j) {
      const double s = w.row(static_cast<Index>(j)).cwiseAbs().sum();
      if (roles[j] == f) {
        in_sum += s;
        in_n += w.cols();
      } else {
        out_sum += s;
        out_n += w.cols();
      }
    }
    if (in_n == 0) throw ConfigError(std::string("attribution: no column labelled '") + f + "'");
    report.factors[static_cast<std::size_t>(k)] = {f, in_sum / static_cast<double>(in_n),
                                                   out_n > 0 ? out_sum / static_cast<double>(out_n) : 0.0};
  }
  return report;
}

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f(%.3f)", mean, stddev);
  return buf;
}

std::string Summary::format() const { return format_mean_std(mean, stddev); }

Summary aggregate(std::span<const double> values) {
  if (values.empty()) throw ConfigError("aggregate: no values");
  Summary s;
  s.count = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

std::string metric_name(Mode mode) { return mode == Mode::kBinary ? "eps_ate" : "mse"; }

double metric(const Sd2Model& model, const data::GeneratedDataset& ds) {
  if (model.config().mode == Mode::kBinary) return eps_ate(model, ds);
  const auto grid = default_grid(ds);
  return counterfactual_mse(model, ds, grid);
}

std::pair<double, double> protocol_scores(const Sd2Model& model, const data::Splits& splits) {
  if (splits.train.size() == 0 || splits.test.size() == 0) throw ConfigError("protocol: missing train or test split");
  return {metric(model, splits.train), metric(model, splits.test)};
}

ProtocolResult protocol_run(const train::TrainConfig& config, const data::Splits& splits, const train::LogFn& log) {
  if (splits.train.size() == 0 || splits.val.size() == 0 || splits.test.size() == 0) {
    throw ConfigError("protocol: missing split");
  }
  ProtocolResult r{0.0, 0.0, train::train(config, splits.train, splits.val, log)};
  std::tie(r.within, r.out) = protocol_scores(r.trained.model, splits);
  return r;
}

std::size_t EvalReport::failures() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const RunRow& r) { return !r.error.empty(); }));
}

void EvalReport::summarize() {
  std::vector<double> w, o;
  for (const auto& r : runs) {
    if (!r.error.empty()) continue;
    w.push_back(r.within);
    o.push_back(r.out);
  }
  within = w.empty() ? Summary{} : aggregate(w);
  out = o.empty() ? Summary{} : aggregate(o);
}

json EvalReport::to_json() const {
  json rows = json::array();
  for (const auto& r : runs) {
    json row{{"index", r.index}, {"seed", r.seed}, {"selected_epoch", r.selected_epoch}};
    if (r.error.empty()) {
      row["within"] = r.within;
      row["out"] = r.out;
    } else {
      row["error"] = r.error;
    }
    rows.push_back(row);
  }
  return {{"metric", metric},
          {"variant", variant},
          {"config_hash", config_hash},
          {"runs", rows},
          {"failures", failures()},
          {"within", {{"mean", within.mean}, {"std", within.stddev}, {"count", within.count}, {"cell", within.format()}}},
          {"out", {{"mean", out.mean}, {"std", out.stddev}, {"count", out.count}, {"cell", out.format()}}}};
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::string s = "run,seed,variant,metric,within,out,selected_epoch,error\n";
  for (const auto& r : runs) {
    s += std::to_string(r.index) + ',' + std::to_string(r.seed) + ',' + variant + ',' + metric + ',';
    if (r.error.empty()) {
      s += csv::format(r.within) + ',' + csv::format(r.out);
    } else {
      s += ',';
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    s += ',' + std::to_string(r.selected_epoch) + ",\"" + err + "\"\n";
  }
  s += "mean,," + variant + ',' + metric + ',' + csv::format(within.mean) + ',' + csv::format(out.mean) + ",,\n";
  s += "std,," + variant + ',' + metric + ',' + csv::format(within.stddev) + ',' + csv::format(out.stddev) + ",,\n";
  write_text(path, s);
}

EvalReport replicate_protocol(const train::TrainConfig& config, std::size_t k, std::uint64_t base_seed,
                              const train::DataFactory& data, int jobs, const train::LogFn& log) {
  auto replicas = train::replicate(config, k, base_seed, data, jobs, log);
  EvalReport report;
  report.metric = metric_name(config.mode());
  report.variant = train::to_string(config.variant);
  report.config_hash = train::config_hash(config);
  for (auto& rep : replicas) {
    RunRow row;
    row.index = rep.index;
    row.seed = rep.seed;
    row.error = rep.error;
    if (rep.result) {
      row.selected_epoch = rep.result->history.selected_epoch;
      try {
        std::tie(row.within, row.out) = protocol_scores(rep.result->model, *rep.splits);
      } catch (const Error& e) {
        row.error = e.what();
      }
    }
    report.runs.push_back(row);
  }
  report.summarize();
  return report;
}

void write_attribution_csv(const AttributionReport& report, const std::filesystem::path& path) {
  std::string s = "factor,true_slice,other_slice,ratio\n";
  for (const auto& f : report.factors) {
    s += std::string(1, f.factor) + ',' + csv::format(f.true_slice) + ',' + csv::format(f.other_slice) + ',' +
         csv::format(f.ratio()) + '\n';
  }
  write_text(path, s);
}

}  // namespace sd2::eval
