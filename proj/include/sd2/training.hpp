#pragma once

#include "sd2/datagen.hpp"
#include "sd2/errors.hpp"
#include "sd2/losses.hpp"
#include "sd2/model.hpp"
#include "sd2/optim.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sd2::train {

enum class Variant { kLp, kLpLt, kLpLtLa, kTotal };
std::string to_string(Variant v);  // "Lp", "Lp+Lt", "Lp+Lt+La", "Total"
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  ArchConfig arch;
  losses::LossWeights weights;
  losses::LossOptions options;
  optim::AdamConfig adam;
  int batch_size = 256;
  int max_epochs = 300;
  int patience = 30;
  std::uint64_t seed = 0;
  Variant variant = Variant::kTotal;
  // Importance weights on the factual outcome loss; only used in binary mode
  // while the confounder head is trained (gamma > 0).
  bool importance_weighting = true;
  nlohmann::json dataset = nlohmann::json::object();

  Mode mode() const { return arch.mode; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing fields take defaults; unknown fields are rejected.
TrainConfig config_from_json(const nlohmann::json& j);
// 16 hex digits over the canonical JSON, seed excluded.
std::string config_hash(const TrainConfig& c);

// Lp: alpha = beta = gamma = 0 and no treatment channel into the outcome head.
// Lp+Lt: alpha restored. Lp+Lt+La: beta restored. Total: unchanged.
TrainConfig apply_ablation(TrainConfig c, Variant v);

struct EpochRecord {
  int epoch = 0;
  losses::LossBreakdown train;  // batch-size-weighted mean over the epoch
  losses::LossBreakdown val;
  double criterion = 0.0;  // validation selection criterion
  double seconds = 0.0;
  int skipped_batches = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int selected_epoch = -1;  // -1 when no epoch ran
  double selected_criterion = 0.0;
  bool stopped_early = false;

  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Sd2Model model;
  TrainHistory history;
};

using LogFn = std::function<void(std::string_view)>;
void log_to_stderr(std::string_view msg);
using EpochFn = std::function<void(const EpochRecord&)>;

// Adam over the configured total loss. Returns the parameters of the best
// validation epoch. Throws NumericalError naming epoch, batch and term when a
// loss goes non-finite.
TrainResult train(const TrainConfig& config, const data::GeneratedDataset& train_set,
                  const data::GeneratedDataset& val_set, const LogFn& log = log_to_stderr,
                  const EpochFn& on_epoch = {});

// Weighted factual outcome loss + alpha * factual treatment loss of `model`
// on `ds`, plus the full breakdown.
struct Validation {
  losses::LossBreakdown breakdown;
  double criterion = 0.0;
};
Validation validate_model(const TrainConfig& config, const Sd2Model& model, const data::GeneratedDataset& ds);

// Training, validation and test sets for one replication.
using DataFactory = std::function<data::Splits(std::uint64_t seed)>;

struct Replica {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::shared_ptr<const data::Splits> splits;
  std::optional<TrainResult> result;
  std::string error;  // empty on success
  ExitCode code = ExitCode::kOk;
};

std::uint64_t replica_seed(std::uint64_t base_seed, std::size_t index);

// k runs with seeds replica_seed(base_seed, i); `data` is called with the same
// seed. Failures are recorded per replica. Output is ordered by index and is
// independent of `jobs`.
std::vector<Replica> replicate(const TrainConfig& config, std::size_t k, std::uint64_t base_seed,
                               const DataFactory& data, int jobs = 1, const LogFn& log = log_to_stderr);

// <root>/<config_hash>-<seed>
std::filesystem::path run_directory(const std::filesystem::path& root, const TrainConfig& config);
// history.csv, checkpoint.json/.bin and manifest.json (config verbatim).
void save_run(const std::filesystem::path& dir, const TrainConfig& config, const TrainResult& result);

}  // namespace sd2::train
