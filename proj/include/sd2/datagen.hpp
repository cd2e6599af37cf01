#pragma once

// Benchmark construction with known ground truth.

#include "sd2/autodiff.hpp"
#include "sd2/model.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sd2::data {

using ad::Index;
using ad::Tensor;

// Binary synthetic benchmark, named mv-mz-mc-ma-mu.
struct SyntheticSpec {
  int mv = 0, mz = 4, mc = 4, ma = 2, mu = 2;
  long n = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  std::string name() const;  // "Syn-0-4-4-2-2"
  // Accepts "0-4-4-2-2" or "Syn-0-4-4-2-2".
  static SyntheticSpec parse(const std::string& dims, long n, std::uint64_t seed);
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Continuous demand-style benchmark. alpha scales the instrument's pull on t,
// beta the confounder's pull on y.
struct DemandSpec {
  double alpha = 0.0, beta = 1.0;
  int mz = 1, mc = 1, ma = 1;
  long n = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  std::string name() const;  // "Demand-0-1"
  friend bool operator==(const DemandSpec&, const DemandSpec&) = default;
};

// Row predicates for the twins transform. Each applies only when its columns
// exist in the input.
struct TwinsFilter {
  std::array<std::string, 2> weight_columns{"dbirwt_0", "dbirwt_1"};
  double max_weight = 2000.0;  // both twins strictly below
  std::array<std::string, 2> sex_columns{"csex_0", "csex_1"};
  bool same_sex = true;
};

struct TwinsSpec {
  std::filesystem::path csv;
  std::vector<std::string> m_columns;  // drive treatment; some are hidden
  std::vector<std::string> r_columns;
  int hidden = 1;
  int mv = 0;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.63, 0.27, 0.10};
  std::array<std::string, 2> outcome_columns{"mort_0", "mort_1"};
  TwinsFilter filter;

  void validate() const;
};

enum class DatasetKind { kSynthetic, kDemand, kTwins };
std::string to_string(DatasetKind k);
DatasetKind kind_from_string(const std::string& s);

struct GeneratedDataset {
  DatasetKind kind = DatasetKind::kSynthetic;
  Tensor x;  // n x (mz+mc+ma)
  Tensor v;  // n x mv
  std::vector<double> t, y;
  std::vector<char> roles;  // 'z', 'c' or 'a' per column of x

  // Ground truth; absent when loaded without truth.csv.
  bool has_truth = false;
  Tensor u;                           // hidden latents, n x mu
  std::vector<double> p1, p0;         // binary kinds: outcome under t=1 / t=0
  std::vector<double> sum_a, sum_c;   // demand: surface parameters per row
  double demand_beta = 0.0;

  nlohmann::json spec;  // generating spec, verbatim

  Index size() const { return static_cast<Index>(t.size()); }
  Mode mode() const { return kind == DatasetKind::kDemand ? Mode::kContinuous : Mode::kBinary; }
  // Columns of x holding `role`.
  std::vector<Index> role_columns(char role) const;
  // E[y | do(t), x_i] for the demand kind.
  double surface(Index i, double t) const;
  Eigen::VectorXd surface(double t) const;

  GeneratedDataset subset(std::span<const Index> rows) const;
  // Throws ConfigError when sizes disagree or values leave their domain.
  void validate() const;
};

double demand_psi(double t);

GeneratedDataset gen_binary(const SyntheticSpec& spec);
GeneratedDataset gen_continuous(const DemandSpec& spec);
GeneratedDataset twins_transform(const TwinsSpec& spec);

// mean(p1 - p0). Throws ConfigError without binary ground truth.
double true_ate(const GeneratedDataset& ds);

struct Splits {
  GeneratedDataset train, val, test;
};

// Seeded permutation cut at round(r0 n), round((r0+r1) n).
Splits split(const GeneratedDataset& ds, const std::array<double, 3>& ratios, std::uint64_t seed);
// Three independent draws of n rows each, seeds derived from spec.seed.
Splits independent_splits(const SyntheticSpec& spec);
Splits independent_splits(const DemandSpec& spec);

// data.csv, roles.csv, truth.csv (when has_truth) and spec.json.
void write_dataset(const GeneratedDataset& ds, const std::filesystem::path& dir);
GeneratedDataset read_dataset(const std::filesystem::path& dir);

// Resolves a dataset reference to splits for one seed:
//   {"kind": "synthetic" | "demand", ...spec}  three independent draws, spec seed = `seed`
//   {"kind": "twins", ...spec}                  transform, then split by its ratios
//   {"path": dir}                               dir/{train,val,test} when present, else
//                                               read dir and split 63/27/10 under `seed`
Splits resolve_splits(const nlohmann::json& ref, std::uint64_t seed);
// Covariate count of the referenced data without materialising all splits
// where possible.
int resolve_input_dim(const nlohmann::json& ref);

nlohmann::json to_json(const SyntheticSpec& s);
nlohmann::json to_json(const DemandSpec& s);
nlohmann::json to_json(const TwinsSpec& s);
SyntheticSpec synthetic_from_json(const nlohmann::json& j);
DemandSpec demand_from_json(const nlohmann::json& j);
TwinsSpec twins_from_json(const nlohmann::json& j);

}  // namespace sd2::data
