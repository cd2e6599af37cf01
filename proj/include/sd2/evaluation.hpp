#pragma once

#include "sd2/datagen.hpp"
#include "sd2/model.hpp"
#include "sd2/training.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sd2::eval {

using ad::Index;

// | mean(p1 - p0) - mean(g(1,X) - g(0,X)) |
double eps_ate(const Sd2Model& model, const data::GeneratedDataset& ds);
// Same, from predictions already computed.
double eps_ate(std::span<const double> p1, std::span<const double> p0, std::span<const double> g1,
               std::span<const double> g0);

// `points` equispaced do-values over the empirical [lo, hi] quantile range of t.
std::vector<double> default_grid(const data::GeneratedDataset& ds, int points = 10, double coverage = 0.9);
// Mean over rows and grid points of (g(t,x) - E[y|do(t),x])^2.
double counterfactual_mse(const Sd2Model& model, const data::GeneratedDataset& ds, std::span<const double> grid);

struct FactorAttribution {
  char factor = 'z';
  double true_slice = 0.0;   // mean |w| over columns labelled `factor`
  double other_slice = 0.0;  // mean |w| over the remaining columns; 0 when there are none
  double ratio() const;      // true / other; +inf when other is 0
};

struct AttributionReport {
  std::array<FactorAttribution, 3> factors;  // z, c, a
  const FactorAttribution& at(char factor) const;
};

AttributionReport attribution(const Sd2Model& model, std::span<const char> roles);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::size_t count = 0;
  std::string format() const;  // "%.3f(%.3f)"
};

Summary aggregate(std::span<const double> values);
std::string format_mean_std(double mean, double stddev);

// Metric of `model` on `ds`: eps_ate in binary mode, counterfactual MSE over
// the default grid in continuous mode.
double metric(const Sd2Model& model, const data::GeneratedDataset& ds);
std::string metric_name(Mode mode);

struct RunRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double within = 0.0;  // training split
  double out = 0.0;     // test split
  int selected_epoch = -1;
  std::string error;
};

struct EvalReport {
  std::string metric;  // "eps_ate" or "mse"
  std::string variant;
  std::string config_hash;
  std::vector<RunRow> runs;  // failed runs carry `error` and are excluded from the summaries
  Summary within;
  Summary out;

  std::size_t failures() const;
  void summarize();
  nlohmann::json to_json() const;
  // One row per run, then "mean" and "std" rows holding the aggregates.
  void write_csv(const std::filesystem::path& path) const;
};

struct ProtocolResult {
  double within = 0.0;
  double out = 0.0;
  train::TrainResult trained;
};

// Trains on splits.train (validation for selection only) and scores the
// training and test splits.
ProtocolResult protocol_run(const train::TrainConfig& config, const data::Splits& splits,
                            const train::LogFn& log = train::log_to_stderr);
// Scores an already trained model.
std::pair<double, double> protocol_scores(const Sd2Model& model, const data::Splits& splits);

// replicate() followed by scoring every successful run.
EvalReport replicate_protocol(const train::TrainConfig& config, std::size_t k, std::uint64_t base_seed,
                              const train::DataFactory& data, int jobs = 1,
                              const train::LogFn& log = train::log_to_stderr);

void write_attribution_csv(const AttributionReport& report, const std::filesystem::path& path);

}  // namespace sd2::eval
