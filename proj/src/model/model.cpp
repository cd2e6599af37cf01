#include "sd2/model.hpp"

#include "sd2/errors.hpp"
#include "sd2/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <tuple>

namespace sd2 {

using nlohmann::json;

std::string to_string(Mode m) { return m == Mode::kBinary ? "binary" : "continuous"; }

Mode mode_from_string(const std::string& s) {
  if (s == "binary") return Mode::kBinary;
  if (s == "continuous") return Mode::kContinuous;
  throw ConfigError("mode: expected 'binary' or 'continuous', got '" + s + "'");
}

std::string to_string(TreatmentChannel c) {
  switch (c) {
    case TreatmentChannel::kFactual:
      return "factual";
    case TreatmentChannel::kPropensity:
      return "propensity";
    case TreatmentChannel::kNone:
      return "none";
  }
  return "factual";
}

TreatmentChannel channel_from_string(const std::string& s) {
  if (s == "factual") return TreatmentChannel::kFactual;
  if (s == "propensity") return TreatmentChannel::kPropensity;
  if (s == "none") return TreatmentChannel::kNone;
  throw ConfigError("treatment_channel: expected factual, propensity or none, got '" + s + "'");
}

void ArchConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("arch.") + name + " must be >= 1");
  };
  positive(input_dim, "input_dim");
  positive(rep_dim, "rep_dim");
  positive(hidden_width, "hidden_width");
  positive(hidden_depth, "hidden_depth");
  positive(head_width, "head_width");
  positive(retain_width, "retain_width");
  positive(rebalance_width, "rebalance_width");
}

json to_json(const ArchConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"rep_dim", c.rep_dim},
              {"hidden_width", c.hidden_width},
              {"hidden_depth", c.hidden_depth},
              {"head_width", c.head_width},
              {"retain_width", c.retain_width},
              {"rebalance_width", c.rebalance_width},
              {"activation", nn::to_string(c.activation)},
              {"mode", to_string(c.mode)},
              {"treatment_channel", to_string(c.channel)}};
}

ArchConfig arch_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("arch: expected an object");
  ArchConfig c;
  auto get_int = [&j](const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) throw ConfigError(std::string("arch.") + key + ": expected an integer");
    out = j[key].get<int>();
  };
  get_int("input_dim", c.input_dim);
  get_int("rep_dim", c.rep_dim);
  get_int("hidden_width", c.hidden_width);
  get_int("hidden_depth", c.hidden_depth);
  get_int("head_width", c.head_width);
  get_int("retain_width", c.retain_width);
  get_int("rebalance_width", c.rebalance_width);
  if (j.contains("activation")) c.activation = nn::activation_from_string(j["activation"].get<std::string>());
  if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
  if (j.contains("treatment_channel")) c.channel = channel_from_string(j["treatment_channel"].get<std::string>());
  for (const auto& [key, _] : j.items()) {
    static const char* known[] = {"input_dim",       "rep_dim",    "hidden_width", "hidden_depth",
                                  "head_width",      "retain_width", "rebalance_width", "activation",
                                  "mode",            "treatment_channel"};
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("arch." + key + ": unknown field");
  }
  c.validate();
  return c;
}

// ---- Normalizer -------------------------------------------------------------

Normalizer Normalizer::identity(int input_dim) {
  Normalizer n;
  n.x_mean = Tensor::Zero(1, input_dim);
  n.x_scale = Tensor::Ones(1, input_dim);
  return n;
}

namespace {

std::pair<double, double> moments(std::span<const double> v) {
  if (v.empty()) return {0.0, 1.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  s = std::sqrt(s / static_cast<double>(v.size()));
  return {m, s > 1e-12 ? s : 1.0};
}

}  // namespace

Normalizer Normalizer::fit(const Tensor& x, std::span<const double> t, std::span<const double> y, Mode mode) {
  Normalizer n = identity(static_cast<int>(x.cols()));
  if (x.rows() > 0) {
    n.x_mean = x.colwise().mean();
    for (ad::Index j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt((x.col(j).array() - n.x_mean(0, j)).square().mean());
      n.x_scale(0, j) = sd > 1e-12 ? sd : 1.0;
    }
  }
  if (mode == Mode::kContinuous) {
    std::tie(n.t_mean, n.t_scale) = moments(t);
    std::tie(n.y_mean, n.y_scale) = moments(y);
  }
  return n;
}

Tensor Normalizer::apply_x(const Tensor& x) const {
  Tensor out = x.rowwise() - x_mean.row(0);
  out.array().rowwise() /= x_scale.row(0).array();
  return out;
}

// ---- Trace value extraction --------------------------------------------------

HeadOutputsBinary BinaryTrace::values() const {
  return {q_t.value(), q_t_z.value(), q_t_c.value(), q_y.value(), q_y_a.value(), q_y_c.value()};
}

GaussianHead GaussianVar::values() const { return {mean.value(), log_std.value()}; }

HeadOutputsContinuous ContinuousTrace::values() const {
  return {t.values(),   t_z.values(), t_c.values(), t_a.values(), t_c_tilde.values(),
          y.values(),   y_a.values(), y_c.values()};
}

// ---- Model ----------------------------------------------------------------------

Sd2Model::Sd2Model(const ArchConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  using nn::Activation;
  const Activation act = config_.activation;
  const ad::Index d = config_.input_dim;
  const ad::Index rep = config_.rep_dim;
  const ad::Index hw = config_.head_width;
  const ad::Index rw = config_.retain_width;
  const bool binary = config_.mode == Mode::kBinary;
  const ad::Index head_out = binary ? 1 : 2;
  const Activation head_act = binary ? Activation::kSigmoid : Activation::kIdentity;

  std::vector<ad::Index> enc_widths{d};
  for (int i = 0; i < config_.hidden_depth; ++i) enc_widths.push_back(config_.hidden_width);
  enc_widths.push_back(rep);

  const std::uint64_t s = derive_seed(seed, "sd2-init");
  enc_z_ = nn::make_mlp(params_, "enc_z", enc_widths, act, Activation::kIdentity, s);
  enc_c_ = nn::make_mlp(params_, "enc_c", enc_widths, act, Activation::kIdentity, s);
  enc_a_ = nn::make_mlp(params_, "enc_a", enc_widths, act, Activation::kIdentity, s);
  retain_t_ = nn::make_mlp(params_, "retain_t", {2 * rep, rw}, act, act, s);
  retain_y_ = nn::make_mlp(params_, "retain_y", {2 * rep, rw}, act, act, s);
  head_t_ = nn::make_mlp(params_, "head_t", {rw, hw, head_out}, act, head_act, s);
  head_y_ = nn::make_mlp(params_, "head_y", {rw + 1, hw, head_out}, act, head_act, s);
  head_t_z_ = nn::make_mlp(params_, "head_t_z", {rep, hw, head_out}, act, head_act, s);
  head_t_c_ = nn::make_mlp(params_, "head_t_c", {rep, hw, head_out}, act, head_act, s);
  head_y_a_ = nn::make_mlp(params_, "head_y_a", {rep, hw, head_out}, act, head_act, s);
  head_y_c_ = nn::make_mlp(params_, "head_y_c", {rep, hw, head_out}, act, head_act, s);
  if (!binary) {
    head_t_a_ = nn::make_mlp(params_, "head_t_a", {rep, hw, 2}, act, Activation::kIdentity, s);
    rebalance_ = nn::make_mlp(params_, "rebalance", {rep, config_.rebalance_width, rep}, act,
                              Activation::kIdentity, s);
    head_t_c_tilde_ = nn::make_mlp(params_, "head_t_c_tilde", {rep, hw, 2}, act, Activation::kIdentity, s);
  }
  norm_ = Normalizer::identity(config_.input_dim);
}

const Tensor& Sd2Model::first_layer_weight(char role) const {
  const nn::Mlp* enc = nullptr;
  switch (role) {
    case 'z':
      enc = &enc_z_;
      break;
    case 'c':
      enc = &enc_c_;
      break;
    case 'a':
      enc = &enc_a_;
      break;
    default:
      throw ConfigError(std::string("no encoder for role '") + role + "'");
  }
  return params_[enc->layers.front().weight].value;
}

void Sd2Model::check_input(const Tensor& x) const {
  if (x.cols() != config_.input_dim) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(config_.input_dim));
  }
}

Sd2Model::EncodedVars Sd2Model::encode_vars(ad::Graph& graph, std::span<const Var> bound, const Tensor& x) const {
  check_input(x);
  Var xin = graph.constant(norm_.apply_x(x));
  return {enc_z_.forward(bound, xin), enc_c_.forward(bound, xin), enc_a_.forward(bound, xin)};
}

Var Sd2Model::outcome_head(ad::Graph& graph, std::span<const Var> bound, Var r_c, Var r_a, Var channel) const {
  (void)graph;
  Var retained = retain_y_.forward(bound, ad::concat_cols(r_c, r_a));
  return head_y_.forward(bound, ad::concat_cols(channel, retained));
}

namespace {

GaussianVar split_gaussian(Var head) {
  return {ad::slice_cols(head, 0, 1), ad::clamp(ad::slice_cols(head, 1, 1), kLogStdMin, kLogStdMax)};
}

}  // namespace

BinaryTrace Sd2Model::trace_binary(ad::Graph& graph, std::span<const Var> bound, const Tensor& x,
                                   const Tensor& t) const {
  if (config_.mode != Mode::kBinary) throw ConfigError("forward_binary on a continuous-mode model");
  if (t.rows() != x.rows() || t.cols() != 1) throw DimensionError("treatment column does not match the batch");
  for (ad::Index i = 0; i < t.rows(); ++i) {
    if (t(i, 0) != 0.0 && t(i, 0) != 1.0) throw ConfigError("binary mode needs treatments in {0, 1}");
  }
  BinaryTrace tr;
  auto enc = encode_vars(graph, bound, x);
  tr.r_z = enc.r_z;
  tr.r_c = enc.r_c;
  tr.r_a = enc.r_a;
  tr.q_t = head_t_.forward(bound, retain_t_.forward(bound, ad::concat_cols(tr.r_z, tr.r_c)));
  tr.q_t_z = head_t_z_.forward(bound, tr.r_z);
  tr.q_t_c = head_t_c_.forward(bound, tr.r_c);
  Var channel;
  switch (config_.channel) {
    case TreatmentChannel::kFactual:
      channel = graph.constant(t);
      break;
    case TreatmentChannel::kPropensity:
      channel = ad::detach(tr.q_t);
      break;
    case TreatmentChannel::kNone:
      channel = graph.constant(Tensor::Zero(x.rows(), 1));
      break;
  }
  tr.q_y = outcome_head(graph, bound, tr.r_c, tr.r_a, channel);
  tr.q_y_a = head_y_a_.forward(bound, tr.r_a);
  tr.q_y_c = head_y_c_.forward(bound, tr.r_c);
  return tr;
}

ContinuousTrace Sd2Model::trace_continuous(ad::Graph& graph, std::span<const Var> bound, const Tensor& x,
                                           const Tensor& t) const {
  if (config_.mode != Mode::kContinuous) throw ConfigError("forward_continuous on a binary-mode model");
  if (t.rows() != x.rows() || t.cols() != 1) throw DimensionError("treatment column does not match the batch");
  ContinuousTrace tr;
  auto enc = encode_vars(graph, bound, x);
  tr.r_z = enc.r_z;
  tr.r_c = enc.r_c;
  tr.r_a = enc.r_a;
  tr.t = split_gaussian(head_t_.forward(bound, retain_t_.forward(bound, ad::concat_cols(tr.r_z, tr.r_c))));
  tr.t_z = split_gaussian(head_t_z_.forward(bound, tr.r_z));
  tr.t_c = split_gaussian(head_t_c_.forward(bound, tr.r_c));
  tr.t_a = split_gaussian(head_t_a_.forward(bound, tr.r_a));
  tr.c_tilde = rebalance_.forward(bound, tr.r_c);
  tr.t_c_tilde = split_gaussian(head_t_c_tilde_.forward(bound, tr.c_tilde));
  Var channel;
  switch (config_.channel) {
    case TreatmentChannel::kFactual: {
      Tensor ts = (t.array() - norm_.t_mean) / norm_.t_scale;
      channel = graph.constant(std::move(ts));
      break;
    }
    case TreatmentChannel::kPropensity:
      channel = ad::detach(tr.t.mean);
      break;
    case TreatmentChannel::kNone:
      channel = graph.constant(Tensor::Zero(x.rows(), 1));
      break;
  }
  tr.y = split_gaussian(outcome_head(graph, bound, tr.r_c, tr.r_a, channel));
  tr.y_a = split_gaussian(head_y_a_.forward(bound, tr.r_a));
  tr.y_c = split_gaussian(head_y_c_.forward(bound, tr.r_c));
  return tr;
}

namespace {

Tensor column(std::span<const double> v) {
  Tensor t(static_cast<ad::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t(static_cast<ad::Index>(i), 0) = v[i];
  return t;
}

}  // namespace

Representations Sd2Model::encode(const Tensor& x) const {
  ad::Graph graph;
  auto bound = params_.bind(graph);
  auto enc = encode_vars(graph, bound, x);
  return {enc.r_z.value(), enc.r_c.value(), enc.r_a.value()};
}

HeadOutputsBinary Sd2Model::forward_binary(const Tensor& x, std::span<const double> t) const {
  ad::Graph graph;
  auto bound = params_.bind(graph);
  return trace_binary(graph, bound, x, column(t)).values();
}

HeadOutputsContinuous Sd2Model::forward_continuous(const Tensor& x, std::span<const double> t) const {
  ad::Graph graph;
  auto bound = params_.bind(graph);
  return trace_continuous(graph, bound, x, column(t)).values();
}

Eigen::VectorXd Sd2Model::predict_outcome(const Tensor& x, double t) const {
  if (!std::isfinite(t)) throw ConfigError("do-value must be finite");
  if (config_.mode == Mode::kBinary && t != 0.0 && t != 1.0) {
    throw ConfigError("binary do-value must be 0 or 1");
  }
  check_input(x);
  double slot = config_.mode == Mode::kBinary ? t : (t - norm_.t_mean) / norm_.t_scale;
  if (config_.channel == TreatmentChannel::kNone) slot = 0.0;
  Eigen::VectorXd out(x.rows());
  // Row chunks bound the tape's memory on large inputs.
  constexpr ad::Index kChunk = 4096;
  for (ad::Index start = 0; start < x.rows(); start += kChunk) {
    const ad::Index len = std::min(kChunk, x.rows() - start);
    ad::Graph graph;
    auto bound = params_.bind(graph);
    auto enc = encode_vars(graph, bound, x.middleRows(start, len));
    Var channel = graph.constant(Tensor::Constant(len, 1, slot));
    Var head = outcome_head(graph, bound, enc.r_c, enc.r_a, channel);
    out.segment(start, len) = head.value().col(0);
  }
  if (config_.mode == Mode::kBinary) return out;
  return (out.array() * norm_.y_scale + norm_.y_mean).matrix();
}

// ---- Checkpoints ----------------------------------------------------------------

std::filesystem::path checkpoint_data_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

namespace {

void write_le_doubles(std::ofstream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    unsigned char bytes[8];
    std::memcpy(bytes, &bits, 8);
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_le_doubles(std::ifstream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits;
    std::memcpy(&bits, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    data[i] = std::bit_cast<double>(bits);
  }
}

std::vector<std::pair<std::string, Tensor>> normalizer_buffers(const Normalizer& n) {
  Tensor ty(1, 4);
  ty << n.t_mean, n.t_scale, n.y_mean, n.y_scale;
  return {{"norm.x_mean", n.x_mean}, {"norm.x_scale", n.x_scale}, {"norm.ty", ty}};
}

}  // namespace

void checkpoint_save(const Sd2Model& model, const std::filesystem::path& path) {
  json manifest;
  manifest["format"] = "sd2-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["arch"] = to_json(model.config());
  manifest["seed"] = model.seed();
  manifest["data_file"] = checkpoint_data_path(path).filename().string();
  json params = json::array();
  for (const auto& p : model.parameters().all()) {
    params.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"is_weight", p.is_weight}});
  }
  manifest["parameters"] = params;
  const auto buffers = normalizer_buffers(model.normalizer());
  json bufs = json::array();
  for (const auto& [name, t] : buffers) bufs.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  manifest["buffers"] = bufs;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint manifest " + path.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
  }
  const auto data_path = checkpoint_data_path(path);
  std::ofstream out(data_path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint data " + data_path.string());
  for (const auto& p : model.parameters().all()) {
    write_le_doubles(out, p.value.data(), static_cast<std::size_t>(p.value.size()));
  }
  for (const auto& [name, t] : buffers) write_le_doubles(out, t.data(), static_cast<std::size_t>(t.size()));
  if (!out) throw IoError("failed writing " + data_path.string());
}

Sd2Model checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint manifest " + path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (manifest.value("format", std::string()) != "sd2-checkpoint") {
      throw ConfigError("checkpoint manifest has no sd2-checkpoint format tag");
    }
    const int version = manifest.at("version").get<int>();
    if (version > kCheckpointVersion) {
      throw ConfigError("checkpoint format version " + std::to_string(version) + " is newer than supported version " +
                        std::to_string(kCheckpointVersion));
    }
    if (version < 1) throw ConfigError("checkpoint format version " + std::to_string(version) + " is invalid");
    const ArchConfig arch = arch_from_json(manifest.at("arch"));
    Sd2Model model(arch, manifest.at("seed").get<std::uint64_t>());

    const json& params = manifest.at("parameters");
    auto& store = model.parameters().all();
    if (params.size() != store.size()) {
      throw ConfigError("checkpoint lists " + std::to_string(params.size()) + " parameters, architecture has " +
                        std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& entry = params[i];
      const std::string name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<long>>();
      if (name != store[i].name) {
        throw ConfigError("checkpoint parameter #" + std::to_string(i) + " is '" + name + "', expected '" +
                          store[i].name + "'");
      }
      if (shape.size() != 2 || shape[0] != store[i].value.rows() || shape[1] != store[i].value.cols()) {
        throw ConfigError("shape mismatch for parameter '" + name + "'");
      }
    }
    Normalizer& norm = model.normalizer();
    auto buffers = normalizer_buffers(norm);
    const json& bufs = manifest.at("buffers");
    if (bufs.size() != buffers.size()) throw ConfigError("checkpoint buffer list does not match");
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      const auto shape = bufs[i].at("shape").get<std::vector<long>>();
      if (bufs[i].at("name").get<std::string>() != buffers[i].first || shape.size() != 2 ||
          shape[0] != buffers[i].second.rows() || shape[1] != buffers[i].second.cols()) {
        throw ConfigError("shape mismatch for buffer '" + buffers[i].first + "'");
      }
    }

    std::filesystem::path data_path = path.parent_path() / manifest.at("data_file").get<std::string>();
    std::ifstream data(data_path, std::ios::binary);
    if (!data) throw IoError("cannot read checkpoint data " + data_path.string());
    for (auto& p : store) read_le_doubles(data, p.value.data(), static_cast<std::size_t>(p.value.size()));
    for (auto& [name, t] : buffers) read_le_doubles(data, t.data(), static_cast<std::size_t>(t.size()));
    if (!data) throw IoError("checkpoint data " + data_path.string() + " is truncated");
    data.peek();
    if (!data.eof()) throw ConfigError("checkpoint data " + data_path.string() + " has trailing bytes");
    norm.x_mean = buffers[0].second;
    norm.x_scale = buffers[1].second;
    norm.t_mean = buffers[2].second(0, 0);
    norm.t_scale = buffers[2].second(0, 1);
    norm.y_mean = buffers[2].second(0, 2);
    norm.y_scale = buffers[2].second(0, 3);
    return model;
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace sd2
