// Command-line front end. Every subcommand writes run_manifest.json into its
// output directory, on failure as well, and ends stdout with a METRIC line.

#include "sd2/csv.hpp"
#include "sd2/datagen.hpp"
#include "sd2/errors.hpp"
#include "sd2/evaluation.hpp"
#include "sd2/info.hpp"
#include "sd2/training.hpp"
#include "sd2/version.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace sd2;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_root() {
  const char* env = std::getenv("SD2_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.filename().string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failure on " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void print_metric(const std::string& name, double value) {
  std::printf("METRIC %s=%s\n", name.c_str(), csv::format(value).c_str());
  std::fflush(stdout);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  return csv::to_double(s, what);
}

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string variants = "Lp,Lp+Lt,Lp+Lt+La,Total";
  std::string splits;
  std::string grid;
  int jobs = 1;
  int reps = 10;
  std::size_t joints = 1000;
  std::size_t ci_joints = 100;
};

// Mutable record that becomes run_manifest.json.
struct Manifest {
  json body;
  fs::path dir;
  void artifact(const fs::path& p) { body["artifacts"].push_back(p.string()); }
};

// Mode of a dataset directory (or split directory) from its spec.json.
Mode dataset_mode(const json& ref, Mode fallback) {
  if (ref.contains("kind")) return ref["kind"] == "demand" ? Mode::kContinuous : Mode::kBinary;
  if (!ref.contains("path")) return fallback;
  fs::path dir = ref["path"].get<std::string>();
  if (fs::is_directory(dir / "train")) dir /= "train";
  const json spec = read_json(dir / "spec.json");
  return spec.value("kind", "") == "demand" ? Mode::kContinuous : Mode::kBinary;
}

train::TrainConfig load_train_config(const Options& o, Manifest& m) {
  json j = o.config.empty() ? json::object() : read_json(o.config);
  if (!j.is_object()) throw ConfigError("config: expected an object");
  if (!o.data.empty()) j["dataset"] = {{"path", o.data}};
  if (o.seed) j["seed"] = *o.seed;
  train::TrainConfig c = train::config_from_json(j);
  if (c.dataset.empty()) throw ConfigError("config.dataset: missing (pass --data or set config.dataset)");
  const bool dim_given = j.contains("arch") && j["arch"].contains("input_dim");
  const bool mode_given = j.contains("arch") && j["arch"].contains("mode");
  if (!dim_given) c.arch.input_dim = data::resolve_input_dim(c.dataset);
  if (!mode_given) c.arch.mode = dataset_mode(c.dataset, c.arch.mode);
  if (!o.variant.empty()) c = train::apply_ablation(c, train::variant_from_string(o.variant));
  c.validate();
  m.body["config"] = train::to_json(c);
  return c;
}

// ---- Subcommands ------------------------------------------------------------------------

int cmd_generate(const Options& o, Manifest& m) {
  if (o.config.empty()) throw ConfigError("generate: --config <spec.json> is required");
  json spec = read_json(o.config);
  if (!spec.is_object() || !spec.contains("kind")) throw ConfigError("spec.kind: missing");
  if (o.seed) spec["seed"] = *o.seed;
  const fs::path out = o.out.empty() ? output_root() / "data" : fs::path(o.out);
  m.dir = out;
  const data::DatasetKind kind = data::kind_from_string(spec["kind"].get<std::string>());
  std::string how = o.splits.empty() ? "auto" : o.splits;

  data::GeneratedDataset single;
  std::optional<data::Splits> parts;
  switch (kind) {
    case data::DatasetKind::kSynthetic: {
      const auto s = data::synthetic_from_json(spec);
      m.body["config"] = data::to_json(s);
      if (how == "auto" || how == "independent") parts = data::independent_splits(s);
      else single = data::gen_binary(s);
      break;
    }
    case data::DatasetKind::kDemand: {
      const auto s = data::demand_from_json(spec);
      m.body["config"] = data::to_json(s);
      if (how == "auto" || how == "independent") parts = data::independent_splits(s);
      else single = data::gen_continuous(s);
      break;
    }
    case data::DatasetKind::kTwins: {
      data::TwinsSpec s = data::twins_from_json(spec);
      if (s.csv.is_relative() && !fs::exists(s.csv)) s.csv = fs::path(o.config).parent_path() / s.csv;
      m.body["config"] = data::to_json(s);
      single = data::twins_transform(s);
      if (how == "auto") parts = data::split(single, s.ratios, s.seed);
      if (how == "independent") throw ConfigError("--splits independent is only defined for generated benchmarks");
      break;
    }
  }
  m.body["seeds"] = {spec.value("seed", std::uint64_t{0})};
  if (!parts && how != "none" && how != "auto" && how != "independent") {
    const auto r = split_list(how, ',');
    if (r.size() != 3) throw ConfigError("--splits: expected none, independent or three ratios");
    const std::array<double, 3> ratios{parse_number(r[0], "--splits"), parse_number(r[1], "--splits"),
                                       parse_number(r[2], "--splits")};
    parts = data::split(single, ratios, spec.value("seed", std::uint64_t{0}));
  }
  if (parts) {
    data::write_dataset(parts->train, out / "train");
    data::write_dataset(parts->val, out / "val");
    data::write_dataset(parts->test, out / "test");
    for (const char* p : {"train", "val", "test"}) m.artifact(out / p);
    std::cout << "wrote " << out.string() << " (train " << parts->train.size() << ", val " << parts->val.size()
              << ", test " << parts->test.size() << " rows)\n";
    print_metric("rows", static_cast<double>(parts->train.size()));
  } else {
    data::write_dataset(single, out);
    m.artifact(out);
    std::cout << "wrote " << out.string() << " (" << single.size() << " rows)\n";
    print_metric("rows", static_cast<double>(single.size()));
  }
  return 0;
}

int cmd_train(const Options& o, Manifest& m) {
  const fs::path root = o.out.empty() ? output_root() / "train" : fs::path(o.out);
  m.dir = root;
  const train::TrainConfig c = load_train_config(o, m);
  m.body["seeds"] = {c.seed};
  const data::Splits splits = data::resolve_splits(c.dataset, c.seed);
  int last_good = -1;
  m.body["last_good_epoch"] = last_good;
  train::TrainResult r = [&] {
    try {
      return train::train(c, splits.train, splits.val, train::log_to_stderr,
                          [&](const train::EpochRecord& e) { last_good = e.epoch; });
    } catch (...) {
      m.body["last_good_epoch"] = last_good;
      throw;
    }
  }();
  m.body["last_good_epoch"] = last_good;
  const fs::path dir = train::run_directory(root, c);
  train::save_run(dir, c, r);
  m.artifact(dir);
  m.body["selected_epoch"] = r.history.selected_epoch;
  std::cout << "run directory " << dir.string() << "\n";
  std::cout << "epochs " << r.history.epochs.size() << ", selected " << r.history.selected_epoch << "\n";
  print_metric("val_criterion", r.history.selected_criterion);
  return 0;
}

int cmd_evaluate(const Options& o, Manifest& m) {
  if (o.checkpoint.empty()) throw ConfigError("evaluate: --checkpoint is required");
  if (o.data.empty()) throw ConfigError("evaluate: --data is required");
  const fs::path out = o.out.empty() ? output_root() / "evaluate" : fs::path(o.out);
  m.dir = out;
  const Sd2Model model = checkpoint_load(o.checkpoint);
  m.body["config"] = {{"checkpoint", o.checkpoint}, {"data", o.data}, {"arch", to_json(model.config())}};
  const fs::path data_dir = o.data;
  if (!fs::is_directory(data_dir)) throw IoError("dataset directory not found: " + data_dir.string());
  const bool split_dir = fs::is_directory(data_dir / "train") && fs::is_directory(data_dir / "test");
  std::vector<std::string> wanted = split_list(o.splits.empty() ? (split_dir ? "within,out" : "all") : o.splits, ',');

  const std::string name = eval::metric_name(model.config().mode);
  json rows = json::array();
  std::string table = "split,metric,value\n";
  double headline = 0.0;
  for (const auto& s : wanted) {
    fs::path dir;
    if (s == "all") dir = data_dir;
    else if (s == "within") dir = data_dir / "train";
    else if (s == "out") dir = data_dir / "test";
    else if (s == "val") dir = data_dir / "val";
    else throw ConfigError("--splits: unknown split '" + s + "' (within, out, val or all)");
    if (s != "all" && !split_dir) throw ConfigError("--splits " + s + " needs a directory with train/ and test/");
    const data::GeneratedDataset ds = data::read_dataset(dir);
    if (ds.mode() != model.config().mode) {
      throw ConfigError("checkpoint mode " + to_string(model.config().mode) + " does not match data mode " +
                        to_string(ds.mode()));
    }
    const double v = eval::metric(model, ds);
    rows.push_back({{"split", s}, {"metric", name}, {"value", v}});
    table += s + ',' + name + ',' + csv::format(v) + '\n';
    std::printf("%-7s %s = %.6f\n", s.c_str(), name.c_str(), v);
    headline = v;
  }
  ensure_dir(out);
  write_text(out / "evaluation.csv", table);
  write_json(out / "evaluation.json", {{"checkpoint", o.checkpoint}, {"metric", name}, {"rows", rows}});
  m.artifact(out / "evaluation.csv");
  m.artifact(out / "evaluation.json");
  print_metric(name, headline);
  return 0;
}

eval::EvalReport run_replication(const train::TrainConfig& c, const Options& o, const fs::path& out, Manifest& m) {
  const std::uint64_t base = c.seed;
  const auto report = eval::replicate_protocol(
      c, static_cast<std::size_t>(o.reps), base, [&c](std::uint64_t s) { return data::resolve_splits(c.dataset, s); },
      o.jobs);
  json seeds = json::array();
  for (std::size_t i = 0; i < static_cast<std::size_t>(o.reps); ++i) seeds.push_back(train::replica_seed(base, i));
  m.body["seeds"] = seeds;
  ensure_dir(out);
  return report;
}

int cmd_replicate(const Options& o, Manifest& m) {
  const fs::path out = o.out.empty() ? output_root() / "replicate" : fs::path(o.out);
  m.dir = out;
  if (o.reps < 1) throw ConfigError("--reps must be >= 1");
  const train::TrainConfig c = load_train_config(o, m);
  const auto report = run_replication(c, o, out, m);
  report.write_csv(out / "report.csv");
  write_json(out / "report.json", report.to_json());
  m.artifact(out / "report.csv");
  m.artifact(out / "report.json");
  std::cout << report.variant << " " << report.metric << " within " << report.within.format() << " out "
            << report.out.format() << " (" << report.failures() << " failed)\n";
  print_metric(report.metric + "_out_mean", report.out.mean);
  return report.failures() == report.runs.size() ? static_cast<int>(ExitCode::kNumerical) : 0;
}

int cmd_ablate(const Options& o, Manifest& m) {
  const fs::path out = o.out.empty() ? output_root() / "ablate" : fs::path(o.out);
  m.dir = out;
  if (o.reps < 1) throw ConfigError("--reps must be >= 1");
  Options base = o;
  base.variant.clear();
  const train::TrainConfig c = load_train_config(base, m);
  std::string table = "variant,metric,within,out,within_mean,within_std,out_mean,out_std,failures\n";
  json reports = json::array();
  double total_out = 0.0;
  std::cout << "variant    within          out\n";
  for (const auto& v : split_list(o.variants, ',')) {
    const train::TrainConfig cv = train::apply_ablation(c, train::variant_from_string(v));
    const auto r = run_replication(cv, o, out, m);
    table += r.variant + ',' + r.metric + ',' + r.within.format() + ',' + r.out.format() + ',' +
             csv::format(r.within.mean) + ',' + csv::format(r.within.stddev) + ',' + csv::format(r.out.mean) + ',' +
             csv::format(r.out.stddev) + ',' + std::to_string(r.failures()) + '\n';
    reports.push_back(r.to_json());
    std::printf("%-10s %-15s %s\n", r.variant.c_str(), r.within.format().c_str(), r.out.format().c_str());
    if (cv.variant == train::Variant::kTotal) total_out = r.out.mean;
  }
  write_text(out / "ablation.csv", table);
  write_json(out / "ablation.json", reports);
  m.artifact(out / "ablation.csv");
  m.artifact(out / "ablation.json");
  print_metric(eval::metric_name(c.mode()) + "_total_out", total_out);
  return 0;
}

int cmd_attribute(const Options& o, Manifest& m) {
  if (o.checkpoint.empty()) throw ConfigError("attribute: --checkpoint is required");
  if (o.data.empty()) throw ConfigError("attribute: --data is required (for role labels)");
  const fs::path out = o.out.empty() ? output_root() / "attribute" : fs::path(o.out);
  m.dir = out;
  m.body["config"] = {{"checkpoint", o.checkpoint}, {"data", o.data}};
  const Sd2Model model = checkpoint_load(o.checkpoint);
  fs::path dir = o.data;
  if (fs::is_directory(dir / "train")) dir /= "train";
  const data::GeneratedDataset ds = data::read_dataset(dir);
  const auto report = eval::attribution(model, ds.roles);
  ensure_dir(out);
  eval::write_attribution_csv(report, out / "attribution.csv");
  m.artifact(out / "attribution.csv");
  double lowest = std::numeric_limits<double>::infinity();
  std::cout << "factor true_slice other_slice ratio\n";
  for (const auto& f : report.factors) {
    std::printf("%c      %.6f   %.6f    %.3f\n", f.factor, f.true_slice, f.other_slice, f.ratio());
    lowest = std::min(lowest, f.ratio());
  }
  print_metric("min_attribution_ratio", lowest);
  return 0;
}

int cmd_verify(const Options& o, Manifest& m) {
  const fs::path out = o.out.empty() ? output_root() / "verify" : fs::path(o.out);
  m.dir = out;
  const std::uint64_t seed = o.seed.value_or(0);
  m.body["seeds"] = {seed};
  m.body["config"] = {{"joints", o.joints}, {"ci_joints", o.ci_joints}};
  const info::IdentityReport r = info::run_identity_suite(o.joints, o.ci_joints, seed);
  const double worst = std::max(r.max_chain_rule_residual, r.max_entropy_form_residual);
  std::printf("chain rule residual   %.3e over %zu joints\n", r.max_chain_rule_residual, r.random_joints);
  std::printf("entropy form residual %.3e\n", r.max_entropy_form_residual);
  std::printf("premise gap (CI)      %.3e over %zu joints\n", r.max_ci_premise_gap, r.ci_joints);
  std::printf("XOR gap vs I(a;c|y)   %.3e\n", r.xor_premise_gap_error);
  std::cout << (r.passed ? "all identities hold\n" : "IDENTITY FAILURE\n");
  m.body["report"] = {{"max_chain_rule_residual", r.max_chain_rule_residual},
                      {"max_entropy_form_residual", r.max_entropy_form_residual},
                      {"max_ci_premise_gap", r.max_ci_premise_gap},
                      {"xor_premise_gap_error", r.xor_premise_gap_error},
                      {"passed", r.passed}};
  print_metric("max_residual", std::max(worst, r.max_ci_premise_gap));
  if (!r.passed) throw VerificationError("information identity residual above tolerance");
  return 0;
}

int cmd_sweep(const Options& o, Manifest& m) {
  const fs::path out = o.out.empty() ? output_root() / "sweep" : fs::path(o.out);
  m.dir = out;
  if (o.grid.empty()) throw ConfigError("sweep: --grid <coef>=v1,v2,... is required");
  if (o.reps < 1) throw ConfigError("--reps must be >= 1");
  const auto eq = o.grid.find('=');
  if (eq == std::string::npos) throw ConfigError("--grid: expected <coef>=v1,v2,...");
  const std::string coef = o.grid.substr(0, eq);
  std::vector<double> values;
  for (const auto& v : split_list(o.grid.substr(eq + 1), ',')) values.push_back(parse_number(v, "--grid"));
  if (values.empty()) throw ConfigError("--grid: no values");
  const train::TrainConfig c = load_train_config(o, m);
  m.body["grid"] = {{"coefficient", coef}, {"values", values}};

  std::string table = "coefficient,value,metric,within,out,within_mean,out_mean,failures\n";
  std::cout << coef << "    within          out\n";
  double best = std::numeric_limits<double>::infinity();
  for (double v : values) {
    train::TrainConfig cv = c;
    if (coef == "alpha") cv.weights.alpha = v;
    else if (coef == "beta") cv.weights.beta = v;
    else if (coef == "gamma") cv.weights.gamma = v;
    else if (coef == "delta") cv.weights.delta = v;
    else if (coef == "omega_cont") cv.weights.omega_cont = v;
    else throw ConfigError("--grid: unknown coefficient '" + coef + "' (alpha, beta, gamma, delta, omega_cont)");
    cv.validate();
    const auto r = run_replication(cv, o, out, m);
    table += coef + ',' + csv::format(v) + ',' + r.metric + ',' + r.within.format() + ',' + r.out.format() + ',' +
             csv::format(r.within.mean) + ',' + csv::format(r.out.mean) + ',' + std::to_string(r.failures()) + '\n';
    std::printf("%-8g %-15s %s\n", v, r.within.format().c_str(), r.out.format().c_str());
    best = std::min(best, r.out.mean);
  }
  write_text(out / "sweep.csv", table);
  m.artifact(out / "sweep.csv");
  print_metric("best_out_mean", best);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled self-distillation for treatment effect estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sd2::kVersion);
  Options o;

  auto add_seed = [&o](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t s) { o.seed = s; }, "Seed override");
  };
  auto* gen = app.add_subcommand("generate", "Generate a benchmark dataset");
  gen->add_option("--config", o.config, "Dataset spec (JSON)")->required();
  gen->add_option("--out", o.out, "Output dataset directory");
  gen->add_option("--splits", o.splits, "auto, none, independent or r_train,r_val,r_test");
  add_seed(gen);

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", o.config, "Training config (JSON)");
  tr->add_option("--data", o.data, "Dataset directory");
  tr->add_option("--out", o.out, "Output root for run directories");
  tr->add_option("--variant", o.variant, "Lp, Lp+Lt, Lp+Lt+La or Total");
  add_seed(tr);

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--out", o.out, "Report directory");
  ev->add_option("--splits", o.splits, "Comma list of within, out, val or all");

  auto* rep = app.add_subcommand("replicate", "Repeated train/evaluate with derived seeds");
  auto* abl = app.add_subcommand("ablate", "Replicate every loss variant");
  auto* sw = app.add_subcommand("sweep", "Replicate over a grid of one loss coefficient");
  for (auto* sub : {rep, abl, sw}) {
    sub->add_option("--config", o.config, "Training config (JSON)");
    sub->add_option("--data", o.data, "Dataset directory (fixed data for every replication)");
    sub->add_option("--out", o.out, "Report directory");
    sub->add_option("--reps", o.reps, "Replications")->check(CLI::PositiveNumber);
    sub->add_option("--jobs", o.jobs, "Parallel runs")->check(CLI::PositiveNumber);
    add_seed(sub);
  }
  rep->add_option("--variant", o.variant, "Lp, Lp+Lt, Lp+Lt+La or Total");
  sw->add_option("--variant", o.variant, "Lp, Lp+Lt, Lp+Lt+La or Total");
  abl->add_option("--variants", o.variants, "Comma list of variants");
  sw->add_option("--grid", o.grid, "<alpha|beta|gamma|delta|omega_cont>=v1,v2,...")->required();

  auto* at = app.add_subcommand("attribute", "First-layer weight attribution per encoder");
  at->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->required();
  at->add_option("--data", o.data, "Dataset directory providing role labels")->required();
  at->add_option("--out", o.out, "Report directory");

  auto* ver = app.add_subcommand("verify", "Check the information identities on random joints");
  ver->add_option("--joints", o.joints, "Random joints")->check(CLI::PositiveNumber);
  ver->add_option("--ci-joints", o.ci_joints, "Conditionally independent joints");
  ver->add_option("--out", o.out, "Manifest directory");
  add_seed(ver);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(sd2::ExitCode::kConfig);
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest m;
  m.body = {{"subcommand", sub->get_name()},
            {"tool_version", sd2::kVersion},
            {"started_at", utc_now()},
            {"argv", std::vector<std::string>(argv, argv + argc)},
            {"config", json::object()},
            {"seeds", json::array()},
            {"artifacts", json::array()}};

  int code = 0;
  try {
    const std::string name = sub->get_name();
    if (name == "generate") code = cmd_generate(o, m);
    else if (name == "train") code = cmd_train(o, m);
    else if (name == "evaluate") code = cmd_evaluate(o, m);
    else if (name == "replicate") code = cmd_replicate(o, m);
    else if (name == "ablate") code = cmd_ablate(o, m);
    else if (name == "attribute") code = cmd_attribute(o, m);
    else if (name == "verify") code = cmd_verify(o, m);
    else if (name == "sweep") code = cmd_sweep(o, m);
  } catch (const sd2::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    m.body["error"] = e.what();
    code = static_cast<int>(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    m.body["error"] = e.what();
    code = static_cast<int>(sd2::ExitCode::kConfig);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    m.body["error"] = e.what();
    code = static_cast<int>(sd2::ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    m.body["error"] = e.what();
    code = static_cast<int>(sd2::ExitCode::kNumerical);
  }
  m.body["finished_at"] = utc_now();
  m.body["exit_code"] = code;
  m.body["status"] = code == 0 ? "ok" : "error";
  if (m.dir.empty()) m.dir = output_root() / sub->get_name();
  try {
    write_json(m.dir / "run_manifest.json", m.body);
  } catch (const sd2::Error& e) {
    std::cerr << "warning: manifest not written: " << e.what() << '\n';
    if (code == 0) code = static_cast<int>(sd2::ExitCode::kIo);
  }
  return code;
}
