#include "doctest.h"
#include "helpers.hpp"

#include "sd2/errors.hpp"
#include "sd2/model.hpp"

#include "json.hpp"

#include <fstream>

using namespace sd2;
using ad::Index;
using ad::Tensor;

namespace {

ArchConfig small_arch(Mode mode = Mode::kBinary) {
  ArchConfig a;
  a.input_dim = 5;
  a.rep_dim = 4;
  a.hidden_width = 8;
  a.hidden_depth = 1;
  a.head_width = 6;
  a.retain_width = 6;
  a.rebalance_width = 5;
  a.mode = mode;
  return a;
}

void zero_prefix(Sd2Model& m, const std::string& prefix) {
  for (auto& p : m.parameters().all()) {
    if (p.name.rfind(prefix, 0) == 0) p.value.setZero();
  }
}

std::vector<double> binary_t(Index n) {
  std::vector<double> t;
  for (Index i = 0; i < n; ++i) t.push_back(static_cast<double>(i % 2));
  return t;
}

}  // namespace

TEST_CASE("architecture validation and JSON round trip") {
  ArchConfig a = small_arch(Mode::kContinuous);
  a.channel = TreatmentChannel::kPropensity;
  CHECK(arch_from_json(to_json(a)) == a);
  ArchConfig bad = a;
  bad.rep_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto j = to_json(a);
  j["bogus"] = 1;
  CHECK_THROWS_AS(arch_from_json(j), ConfigError);
  CHECK(mode_from_string(to_string(Mode::kBinary)) == Mode::kBinary);
  CHECK(channel_from_string(to_string(TreatmentChannel::kNone)) == TreatmentChannel::kNone);
}

TEST_CASE("zero encoder weights give zero representations") {
  Sd2Model m(small_arch(), 1);
  zero_prefix(m, "enc_");
  const auto r = m.encode(test::random_tensor(7, 5, 2));
  CHECK(r.z.isZero());
  CHECK(r.c.isZero());
  CHECK(r.a.isZero());
}

TEST_CASE("representations are deterministic and shaped n x rep_dim") {
  Sd2Model m1(small_arch(), 3), m2(small_arch(), 3), m3(small_arch(), 4);
  const Tensor x = test::random_tensor(9, 5, 5);
  const auto r1 = m1.encode(x), r1b = m1.encode(x), r2 = m2.encode(x), r3 = m3.encode(x);
  CHECK(r1.z.rows() == 9);
  CHECK(r1.z.cols() == 4);
  CHECK(r1.a.cols() == 4);
  CHECK(r1.c == r1b.c);
  CHECK(r1.c == r2.c);
  CHECK(r1.c != r3.c);
  // Encoders are independently initialised.
  CHECK(r1.z != r1.c);
}

TEST_CASE("input width mismatch raises DimensionError") {
  Sd2Model m(small_arch(), 1);
  CHECK_THROWS_AS(m.encode(test::random_tensor(3, 4, 1)), DimensionError);
  CHECK_THROWS_AS(m.forward_binary(test::random_tensor(3, 5, 1), std::vector<double>{0, 1}), DimensionError);
}

TEST_CASE("zero head weights give probability 0.5 everywhere") {
  Sd2Model m(small_arch(), 1);
  zero_prefix(m, "head_");
  const Tensor x = test::random_tensor(6, 5, 7);
  const auto h = m.forward_binary(x, binary_t(6));
  for (const Tensor* q : {&h.q_t, &h.q_t_z, &h.q_t_c, &h.q_y, &h.q_y_a, &h.q_y_c}) {
    CHECK(q->rows() == 6);
    CHECK((q->array() == 0.5).all());
  }
}

TEST_CASE("binary heads are probabilities") {
  Sd2Model m(small_arch(), 11);
  const auto h = m.forward_binary(test::random_tensor(20, 5, 8, 3.0), binary_t(20));
  for (const Tensor* q : {&h.q_t, &h.q_t_z, &h.q_t_c, &h.q_y, &h.q_y_a, &h.q_y_c}) {
    CHECK((q->array() > 0.0).all());
    CHECK((q->array() < 1.0).all());
  }
}

TEST_CASE("potential outcomes under both treatments") {
  Sd2Model m(small_arch(), 2);
  const Tensor x = test::random_tensor(10, 5, 9);
  const Eigen::VectorXd g1 = m.predict_outcome(x, 1.0);
  const Eigen::VectorXd g0 = m.predict_outcome(x, 0.0);
  CHECK(g1.size() == 10);
  CHECK((g1 - g0).cwiseAbs().maxCoeff() > 0.0);
  // The outcome probability under do(t) is the deep head with t in the slot.
  std::vector<double> ones(10, 1.0);
  const auto h = m.forward_binary(x, ones);
  for (Index i = 0; i < 10; ++i) CHECK(g1(i) == doctest::Approx(h.q_y(i, 0)).epsilon(1e-12));
}

TEST_CASE("constant outcome head gives zero individual effects") {
  Sd2Model m(small_arch(), 2);
  zero_prefix(m, "head_y.");
  const Tensor x = test::random_tensor(10, 5, 9);
  CHECK((m.predict_outcome(x, 1.0) - m.predict_outcome(x, 0.0)).isZero());
}

TEST_CASE("no treatment channel makes predictions independent of t") {
  Sd2Model m(small_arch(), 2);
  m.set_channel(TreatmentChannel::kNone);
  const Tensor x = test::random_tensor(10, 5, 9);
  CHECK((m.predict_outcome(x, 1.0) - m.predict_outcome(x, 0.0)).isZero());
}

TEST_CASE("continuous heads: zero weights give standard normals") {
  Sd2Model m(small_arch(Mode::kContinuous), 1);
  zero_prefix(m, "head_");
  const Tensor x = test::random_tensor(4, 5, 3);
  const auto h = m.forward_continuous(x, std::vector<double>{1, 2, 3, 4});
  for (const GaussianHead* g : {&h.t, &h.t_z, &h.t_c, &h.t_a, &h.t_c_tilde, &h.y, &h.y_a, &h.y_c}) {
    CHECK(g->mean.isZero());
    CHECK(g->log_std.isZero());
  }
}

TEST_CASE("continuous log std stays in its clamp range") {
  Sd2Model m(small_arch(Mode::kContinuous), 5);
  for (auto& p : m.parameters().all()) p.value *= 40.0;
  const auto h = m.forward_continuous(test::random_tensor(30, 5, 4, 5.0), std::vector<double>(30, 2.0));
  for (const GaussianHead* g : {&h.t, &h.y, &h.t_c_tilde}) {
    CHECK(g->log_std.minCoeff() >= kLogStdMin);
    CHECK(g->log_std.maxCoeff() <= kLogStdMax);
  }
}

TEST_CASE("continuous prediction over a grid") {
  Sd2Model m(small_arch(Mode::kContinuous), 5);
  const Tensor x = test::random_tensor(12, 5, 4);
  std::vector<Eigen::VectorXd> curves;
  for (int k = 0; k < 10; ++k) curves.push_back(m.predict_outcome(x, 10.0 + k));
  CHECK(curves.size() == 10);
  for (const auto& c : curves) CHECK(c.size() == 12);
}

TEST_CASE("binary-mode model rejects continuous forward and vice versa") {
  Sd2Model b(small_arch(), 1);
  Sd2Model c(small_arch(Mode::kContinuous), 1);
  const Tensor x = test::random_tensor(2, 5, 1);
  CHECK_THROWS_AS(b.forward_continuous(x, std::vector<double>{0, 1}), ConfigError);
  CHECK_THROWS_AS(c.forward_binary(x, std::vector<double>{0, 1}), ConfigError);
}

TEST_CASE("normalizer standardises columns") {
  Tensor x(4, 2);
  x << 1, 5, 2, 5, 3, 5, 4, 5;
  const auto n = Normalizer::fit(x, std::vector<double>{0, 1, 2, 3}, std::vector<double>{1, 1, 3, 3}, Mode::kContinuous);
  const Tensor z = n.apply_x(x);
  CHECK(z.col(0).mean() == doctest::Approx(0.0));
  CHECK(std::sqrt(z.col(0).array().square().mean()) == doctest::Approx(1.0));
  CHECK(z.col(1).isZero());  // constant column keeps scale 1
  CHECK(n.t_mean == doctest::Approx(1.5));
  CHECK(n.y_scale == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip is bitwise") {
  test::TempDir dir("ckpt");
  for (Mode mode : {Mode::kBinary, Mode::kContinuous}) {
    Sd2Model m(small_arch(mode), 17);
    m.normalizer() = Normalizer::fit(test::random_tensor(10, 5, 1), std::vector<double>(10, 1.0),
                                     std::vector<double>(10, 2.0), mode);
    const auto path = dir.path() / (to_string(mode) + ".json");
    checkpoint_save(m, path);
    const Sd2Model back = checkpoint_load(path);
    CHECK(back.config() == m.config());
    REQUIRE(back.parameters().size() == m.parameters().size());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      CHECK(back.parameters()[i].value == m.parameters()[i].value);
    }
    CHECK(back.normalizer().x_mean == m.normalizer().x_mean);
    CHECK(back.normalizer().x_scale == m.normalizer().x_scale);
    const Tensor x = test::random_tensor(5, 5, 3);
    CHECK(back.predict_outcome(x, 1.0) == m.predict_outcome(x, 1.0));
  }
}

TEST_CASE("checkpoint validation") {
  test::TempDir dir("ckpt_bad");
  Sd2Model m(small_arch(), 17);
  const auto path = dir.path() / "model.json";
  checkpoint_save(m, path);
  auto read = [&] {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
  };
  auto write = [&](const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump();
  };
  const auto original = read();

  auto j = original;
  j["parameters"][0]["shape"][0] = 99;
  write(j);
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("shape mismatch"), ConfigError);

  j = original;
  j["version"] = kCheckpointVersion + 1;
  write(j);
  CHECK_THROWS_WITH_AS(checkpoint_load(path), doctest::Contains("newer"), ConfigError);

  write(original);
  std::filesystem::resize_file(checkpoint_data_path(path), 16);
  CHECK_THROWS(checkpoint_load(path));

  CHECK_THROWS_AS(checkpoint_load(dir.path() / "absent.json"), IoError);
}
