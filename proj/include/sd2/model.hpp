#pragma once

// Three encoders (instrument, confounder, adjustment), two retain networks,
// deep heads over the retained pairs, shallow heads over raw representations
// and, in continuous mode, a rebalance network over the confounder
// representation.

#include "sd2/autodiff.hpp"
#include "sd2/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

namespace sd2 {

using ad::Tensor;
using ad::Var;

enum class Mode { kBinary, kContinuous };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// What the deep outcome head sees in its treatment slot while training.
// At prediction time the slot always carries the do-value, except for kNone
// where it is held at zero.
enum class TreatmentChannel {
  kFactual,     // observed T
  kPropensity,  // deep treatment head output, detached
  kNone,        // no treatment input; the outcome head cannot depend on t
};
std::string to_string(TreatmentChannel c);
TreatmentChannel channel_from_string(const std::string& s);

struct ArchConfig {
  int input_dim = 1;
  int rep_dim = 32;
  int hidden_width = 64;
  int hidden_depth = 2;
  int head_width = 32;
  int retain_width = 64;
  int rebalance_width = 32;
  nn::Activation activation = nn::Activation::kElu;
  Mode mode = Mode::kBinary;
  TreatmentChannel channel = TreatmentChannel::kFactual;

  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

nlohmann::json to_json(const ArchConfig& c);
ArchConfig arch_from_json(const nlohmann::json& j);

// Affine standardisation learned from the training split. Heads operate in
// standardised units; predictions are mapped back.
struct Normalizer {
  Tensor x_mean;   // 1 x d
  Tensor x_scale;  // 1 x d
  double t_mean = 0.0;
  double t_scale = 1.0;
  double y_mean = 0.0;
  double y_scale = 1.0;

  static Normalizer identity(int input_dim);
  static Normalizer fit(const Tensor& x, std::span<const double> t, std::span<const double> y, Mode mode);
  Tensor apply_x(const Tensor& x) const;
};

struct Representations {
  Tensor z;
  Tensor c;
  Tensor a;
};

struct HeadOutputsBinary {
  Tensor q_t, q_t_z, q_t_c;
  Tensor q_y, q_y_a, q_y_c;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 3.0;

struct GaussianHead {
  Tensor mean;     // n x 1
  Tensor log_std;  // n x 1, clamped to [-5, 3]
};

struct HeadOutputsContinuous {
  GaussianHead t, t_z, t_c, t_a, t_c_tilde;
  GaussianHead y, y_a, y_c;
};

// Graph-level views used by the losses.
struct BinaryTrace {
  Var r_z, r_c, r_a;
  Var q_t, q_t_z, q_t_c;
  Var q_y, q_y_a, q_y_c;
  HeadOutputsBinary values() const;
};

struct GaussianVar {
  Var mean;
  Var log_std;
  GaussianHead values() const;
};

struct ContinuousTrace {
  Var r_z, r_c, r_a, c_tilde;
  GaussianVar t, t_z, t_c, t_a, t_c_tilde;
  GaussianVar y, y_a, y_c;
  HeadOutputsContinuous values() const;
};

class Sd2Model {
 public:
  Sd2Model(const ArchConfig& config, std::uint64_t seed);

  const ArchConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  Normalizer& normalizer() { return norm_; }
  const Normalizer& normalizer() const { return norm_; }

  // Swaps the treatment slot between training modes; topology is unchanged.
  void set_channel(TreatmentChannel channel) { config_.channel = channel; }

  // First dense layer (input_dim x width) of the encoder for role 'z', 'c' or 'a'.
  const Tensor& first_layer_weight(char role) const;

  // Trace construction on an existing graph. `bound` is parameters().bind(graph).
  // `t` is the observed treatment column in raw units.
  BinaryTrace trace_binary(ad::Graph& graph, std::span<const Var> bound, const Tensor& x,
                           const Tensor& t) const;
  ContinuousTrace trace_continuous(ad::Graph& graph, std::span<const Var> bound, const Tensor& x,
                                   const Tensor& t) const;

  Representations encode(const Tensor& x) const;
  HeadOutputsBinary forward_binary(const Tensor& x, std::span<const double> t) const;
  HeadOutputsContinuous forward_continuous(const Tensor& x, std::span<const double> t) const;

  // g(t, X): outcome probability (binary) or outcome mean in raw units
  // (continuous) with the do-value in the treatment slot.
  Eigen::VectorXd predict_outcome(const Tensor& x, double t) const;

 private:
  struct EncodedVars {
    Var r_z, r_c, r_a;
  };
  EncodedVars encode_vars(ad::Graph& graph, std::span<const Var> bound, const Tensor& x) const;
  Var outcome_head(ad::Graph& graph, std::span<const Var> bound, Var r_c, Var r_a, Var channel) const;
  void check_input(const Tensor& x) const;

  ArchConfig config_;
  std::uint64_t seed_;
  nn::ParameterStore params_;
  Normalizer norm_;

  nn::Mlp enc_z_, enc_c_, enc_a_;
  nn::Mlp retain_t_, retain_y_;
  nn::Mlp head_t_, head_y_;
  nn::Mlp head_t_z_, head_t_c_, head_y_a_, head_y_c_;
  // continuous only
  nn::Mlp head_t_a_, rebalance_, head_t_c_tilde_;
};

inline constexpr int kCheckpointVersion = 1;

// Writes `path` (JSON manifest) and the sibling `.bin` file of little-endian
// doubles in manifest order.
void checkpoint_save(const Sd2Model& model, const std::filesystem::path& path);
Sd2Model checkpoint_load(const std::filesystem::path& path);

std::filesystem::path checkpoint_data_path(const std::filesystem::path& manifest);

}  // namespace sd2
