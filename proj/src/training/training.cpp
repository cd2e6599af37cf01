#include "sd2/training.hpp"

#include "sd2/csv.hpp"
#include "sd2/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace sd2::train {
namespace {

using ad::Index;
using nlohmann::json;

// Rows per graph when scoring whole splits. The RBF discrepancy is quadratic
// in this.
constexpr Index kEvalChunk = 1024;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failure on " + path.string());
}

template <class T>
T get_field(const json& j, const char* key, T fallback, const char* where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + "." + key + ": unknown field");
  }
}

bool uses_importance_weights(const TrainConfig& c) {
  return c.importance_weighting && c.mode() == Mode::kBinary && c.weights.gamma > 0.0;
}

// Binary losses that need both treatment classes in a batch.
bool needs_both_classes(const TrainConfig& c) {
  return c.mode() == Mode::kBinary && (c.weights.beta > 0.0 || uses_importance_weights(c));
}

bool single_class(const std::vector<double>& t, std::span<const Index> rows) {
  if (rows.empty()) return true;
  const double first = t[static_cast<std::size_t>(rows.front())];
  return std::all_of(rows.begin(), rows.end(), [&](Index r) { return t[static_cast<std::size_t>(r)] == first; });
}

struct Batch {
  Tensor x, t, y;  // t, y in the heads' units
  Tensor t_raw;    // fed to the model's treatment slot
};

Batch gather(const data::GeneratedDataset& ds, const Normalizer& norm, Mode mode, std::span<const Index> rows) {
  Batch b;
  const auto m = static_cast<Index>(rows.size());
  b.x.resize(m, ds.x.cols());
  b.t.resize(m, 1);
  b.y.resize(m, 1);
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    b.x.row(i) = ds.x.row(r);
    b.t(i, 0) = ds.t[static_cast<std::size_t>(r)];
    b.y(i, 0) = ds.y[static_cast<std::size_t>(r)];
  }
  b.t_raw = b.t;
  if (mode == Mode::kContinuous) {
    b.t = (b.t.array() - norm.t_mean) / norm.t_scale;
    b.y = (b.y.array() - norm.y_mean) / norm.y_scale;
  }
  return b;
}

// Builds the loss for one batch on `graph`.
losses::LossTrace batch_loss(const TrainConfig& c, const Sd2Model& model, ad::Graph& graph,
                             std::span<const ad::Var> bound, const Batch& b, bool allow_adjust) {
  losses::LossWeights w = c.weights;
  if (!allow_adjust) w.beta = 0.0;
  if (c.mode() == Mode::kBinary) {
    const BinaryTrace tr = model.trace_binary(graph, bound, b.x, b.t_raw);
    losses::SampleWeights sw = losses::SampleWeights::ones(b.x.rows());
    if (uses_importance_weights(c) && allow_adjust) {
      const Tensor& pi = tr.q_t_c.value();
      sw = losses::importance_weights(std::span<const double>(pi.data(), static_cast<std::size_t>(pi.rows())),
                                      std::span<const double>(b.t.data(), static_cast<std::size_t>(b.t.rows())));
    }
    return losses::total_loss_binary(bound, model.parameters(), tr, b.t, b.y, sw, w, c.options);
  }
  const ContinuousTrace tr = model.trace_continuous(graph, bound, b.x, b.t_raw);
  return losses::total_loss_continuous(bound, model.parameters(), tr, b.t, b.y, w, c.options);
}

void add_scaled(std::array<double, 8>& acc, const losses::LossBreakdown& b, double w) {
  const auto v = b.as_array();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * v[i];
}

losses::LossBreakdown from_array(const std::array<double, 8>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kLp:
      return "Lp";
    case Variant::kLpLt:
      return "Lp+Lt";
    case Variant::kLpLtLa:
      return "Lp+Lt+La";
    case Variant::kTotal:
      return "Total";
  }
  return "Total";
}

Variant variant_from_string(const std::string& s) {
  if (s == "Lp") return Variant::kLp;
  if (s == "Lp+Lt") return Variant::kLpLt;
  if (s == "Lp+Lt+La") return Variant::kLpLtLa;
  if (s == "Total") return Variant::kTotal;
  throw ConfigError("variant: expected Lp, Lp+Lt, Lp+Lt+La or Total, got '" + s + "'");
}

void TrainConfig::validate() const {
  arch.validate();
  weights.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs > 0 && patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
    throw ConfigError("optimizer.lr must be a finite non-negative number");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("optimizer.eps must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"arch", to_json(c.arch)},
          {"loss", losses::to_json(c.weights)},
          {"loss_options",
           {{"kernel", losses::to_string(c.options.kernel)},
            {"teacher_direction", losses::to_string(c.options.teacher_direction)},
            {"confounder_label_term", c.options.confounder_label_term}}},
          {"optimizer",
           {{"lr", c.adam.learning_rate}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.epsilon}}},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"variant", to_string(c.variant)},
          {"importance_weighting", c.importance_weighting},
          {"dataset", c.dataset}};
}

TrainConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"arch", "loss", "loss_options", "optimizer", "batch_size", "max_epochs", "patience", "seed",
                  "variant", "importance_weighting", "dataset"},
                 "config");
  TrainConfig c;
  if (j.contains("arch")) c.arch = arch_from_json(j["arch"]);
  if (j.contains("loss")) c.weights = losses::weights_from_json(j["loss"]);
  if (j.contains("loss_options")) {
    const json& o = j["loss_options"];
    reject_unknown(o, {"kernel", "teacher_direction", "confounder_label_term"}, "config.loss_options");
    if (o.contains("kernel")) c.options.kernel = losses::kernel_from_string(get_field<std::string>(o, "kernel", "", "loss_options"));
    if (o.contains("teacher_direction")) {
      c.options.teacher_direction =
          losses::kl_direction_from_string(get_field<std::string>(o, "teacher_direction", "", "loss_options"));
    }
    c.options.confounder_label_term =
        get_field(o, "confounder_label_term", c.options.confounder_label_term, "loss_options");
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown(o, {"lr", "beta1", "beta2", "eps"}, "config.optimizer");
    c.adam.learning_rate = get_field(o, "lr", c.adam.learning_rate, "optimizer");
    c.adam.beta1 = get_field(o, "beta1", c.adam.beta1, "optimizer");
    c.adam.beta2 = get_field(o, "beta2", c.adam.beta2, "optimizer");
    c.adam.epsilon = get_field(o, "eps", c.adam.epsilon, "optimizer");
  }
  c.batch_size = get_field(j, "batch_size", c.batch_size, "config");
  c.max_epochs = get_field(j, "max_epochs", c.max_epochs, "config");
  c.patience = get_field(j, "patience", c.patience, "config");
  c.seed = get_field(j, "seed", c.seed, "config");
  if (j.contains("variant")) c.variant = variant_from_string(get_field<std::string>(j, "variant", "", "config"));
  c.importance_weighting = get_field(j, "importance_weighting", c.importance_weighting, "config");
  if (j.contains("dataset")) c.dataset = j["dataset"];
  c.validate();
  return c;
}

std::string config_hash(const TrainConfig& c) {
  json j = to_json(c);
  j.erase("seed");
  return hex16(mix64(hash_tag(j.dump())));
}

TrainConfig apply_ablation(TrainConfig c, Variant v) {
  c.variant = v;
  switch (v) {
    case Variant::kLp:
      c.weights.alpha = c.weights.beta = c.weights.gamma = 0.0;
      c.weights.omega_cont = 0.0;
      c.arch.channel = TreatmentChannel::kNone;
      break;
    case Variant::kLpLt:
      c.weights.beta = c.weights.gamma = 0.0;
      c.weights.omega_cont = 0.0;
      break;
    case Variant::kLpLtLa:
      c.weights.gamma = 0.0;
      c.weights.omega_cont = 0.0;
      break;
    case Variant::kTotal:
      break;
  }
  return c;
}

void log_to_stderr(std::string_view msg) { std::clog << msg << '\n'; }

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::string out = "epoch,seconds,skipped_batches,criterion";
  for (const char* n : losses::LossBreakdown::kNames) out += std::string(",train_") + n;
  for (const char* n : losses::LossBreakdown::kNames) out += std::string(",val_") + n;
  out += '\n';
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + ',' + csv::format(e.seconds) + ',' + std::to_string(e.skipped_batches) + ',' +
           csv::format(e.criterion);
    for (double v : e.train.as_array()) out += ',' + csv::format(v);
    for (double v : e.val.as_array()) out += ',' + csv::format(v);
    out += '\n';
  }
  write_text(path, out);
}

Validation validate_model(const TrainConfig& c, const Sd2Model& model, const data::GeneratedDataset& ds) {
  if (ds.size() == 0) throw ConfigError("validation split is empty");
  std::array<double, 8> acc{};
  std::vector<Index> rows(static_cast<std::size_t>(ds.size()));
  std::iota(rows.begin(), rows.end(), Index{0});
  for (Index start = 0; start < ds.size(); start += kEvalChunk) {
    const Index len = std::min(kEvalChunk, ds.size() - start);
    const std::span<const Index> chunk(rows.data() + start, static_cast<std::size_t>(len));
    const Batch b = gather(ds, model.normalizer(), c.mode(), chunk);
    ad::Graph graph;
    const auto bound = model.parameters().bind(graph);
    const bool both = !(needs_both_classes(c) && single_class(ds.t, chunk));
    add_scaled(acc, batch_loss(c, model, graph, bound, b, both).breakdown, static_cast<double>(len));
  }
  for (double& v : acc) v /= static_cast<double>(ds.size());
  Validation out;
  out.breakdown = from_array(acc);
  out.criterion = out.breakdown.factual_y + c.weights.alpha * out.breakdown.factual_t;
  return out;
}

TrainResult train(const TrainConfig& config, const data::GeneratedDataset& train_set,
                  const data::GeneratedDataset& val_set, const LogFn& log, const EpochFn& on_epoch) {
  config.validate();
  for (const auto* ds : {&train_set, &val_set}) {
    if (ds->mode() != config.mode()) {
      throw ConfigError("dataset mode " + to_string(ds->mode()) + " does not match config mode " +
                        to_string(config.mode()));
    }
    if (ds->x.cols() != config.arch.input_dim) {
      throw DimensionError("dataset has " + std::to_string(ds->x.cols()) + " covariates, arch.input_dim is " +
                           std::to_string(config.arch.input_dim));
    }
  }
  if (train_set.size() == 0) throw ConfigError("training split is empty");

  TrainResult result{Sd2Model(config.arch, config.seed), {}};
  Sd2Model& model = result.model;
  model.normalizer() = Normalizer::fit(train_set.x, train_set.t, train_set.y, config.mode());
  TrainHistory& history = result.history;
  if (config.max_epochs == 0) return result;

  nn::ParameterStore& store = model.parameters();
  std::vector<Tensor> params;
  params.reserve(store.size());
  for (const auto& p : store.all()) params.push_back(p.value);
  optim::AdamState adam = optim::make_adam_state(params, config.adam);
  std::vector<Tensor> grads(params.size());
  std::vector<Tensor> best_params = params;

  const Index n = train_set.size();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  RngStream rng(config.seed, "train:shuffle");
  const bool check_classes = needs_both_classes(config);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    rng.shuffle(perm);
    std::array<double, 8> acc{};
    double seen = 0.0;
    int skipped = 0;
    int batch_index = 0;
    bool retried = false;
    for (std::size_t pos = 0; pos < perm.size();) {
      const std::size_t len = std::min(bs, perm.size() - pos);
      const std::span<const Index> rows(perm.data() + pos, len);
      if (check_classes && single_class(train_set.t, rows)) {
        if (!retried) {
          std::vector<Index> tail(perm.begin() + static_cast<std::ptrdiff_t>(pos), perm.end());
          rng.shuffle(tail);
          std::copy(tail.begin(), tail.end(), perm.begin() + static_cast<std::ptrdiff_t>(pos));
          retried = true;
          continue;
        }
        log("warning: epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
            " holds a single treatment class after reshuffling; skipped");
        ++skipped;
        ++batch_index;
        pos += len;
        retried = false;
        continue;
      }
      retried = false;

      const Batch b = gather(train_set, model.normalizer(), config.mode(), rows);
      ad::Graph graph;
      const auto bound = store.bind(graph);
      losses::LossTrace loss;
      try {
        loss = batch_loss(config, model, graph, bound, b, true);
        graph.backward(loss.total);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " +
                             e.what());
      }
      for (std::size_t i = 0; i < bound.size(); ++i) grads[i] = graph.gradient(bound[i]);
      optim::adam_step(params, grads, adam);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].allFinite()) {
          throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
                               ": parameter '" + store[i].name + "' became non-finite");
        }
        store[i].value = params[i];
      }
      add_scaled(acc, loss.breakdown, static_cast<double>(len));
      seen += static_cast<double>(len);
      ++batch_index;
      pos += len;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    if (seen > 0) {
      for (double& v : acc) v /= seen;
    }
    rec.train = from_array(acc);
    rec.skipped_batches = skipped;
    const Validation val = validate_model(config, model, val_set);
    rec.val = val.breakdown;
    rec.criterion = val.criterion;
    if (!std::isfinite(rec.criterion)) {
      throw NumericalError("epoch " + std::to_string(epoch) + ": validation criterion is not finite");
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.criterion < best) {
      best = rec.criterion;
      best_epoch = epoch;
      best_params = params;
    } else if (epoch - best_epoch >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) store[i].value = best_params[i];
  history.selected_epoch = best_epoch;
  history.selected_criterion = best;
  return result;
}

std::uint64_t replica_seed(std::uint64_t base_seed, std::size_t index) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(index));
}

std::vector<Replica> replicate(const TrainConfig& config, std::size_t k, std::uint64_t base_seed,
                               const DataFactory& data, int jobs, const LogFn& log) {
  if (k < 1) throw ConfigError("replicate: k must be >= 1");
  config.validate();
  std::vector<Replica> out(k);
  std::mutex log_mutex;
  const LogFn locked = [&](std::string_view msg) {
    std::lock_guard<std::mutex> lock(log_mutex);
    log(msg);
  };
  auto run = [&](std::size_t i) {
    Replica& r = out[i];
    r.index = i;
    r.seed = replica_seed(base_seed, i);
    try {
      TrainConfig c = config;
      c.seed = r.seed;
      r.splits = std::make_shared<const data::Splits>(data(r.seed));
      r.result.emplace(train(c, r.splits->train, r.splits->val, locked));
    } catch (const Error& e) {
      r.error = e.what();
      r.code = e.code();
    } catch (const std::exception& e) {
      r.error = e.what();
      r.code = ExitCode::kNumerical;
    }
    if (!r.error.empty()) locked("replica " + std::to_string(i) + " failed: " + r.error);
  };

  const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(k)));
  if (workers == 1) {
    for (std::size_t i = 0; i < k; ++i) run(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < k; i = next++) run(i);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

std::filesystem::path run_directory(const std::filesystem::path& root, const TrainConfig& config) {
  return root / (config_hash(config) + "-" + std::to_string(config.seed));
}

void save_run(const std::filesystem::path& dir, const TrainConfig& config, const TrainResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  result.history.write_csv(dir / "history.csv");
  checkpoint_save(result.model, dir / "checkpoint.json");
  const json manifest{{"config", to_json(config)},
                      {"config_hash", config_hash(config)},
                      {"selected_epoch", result.history.selected_epoch},
                      {"selected_criterion", result.history.selected_criterion},
                      {"epochs_run", result.history.epochs.size()},
                      {"stopped_early", result.history.stopped_early}};
  write_text(dir / "manifest.json", manifest.dump(2) + '\n');
}

}  // namespace sd2::train
