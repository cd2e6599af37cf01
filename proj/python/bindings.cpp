#include "sd2/datagen.hpp"
#include "sd2/errors.hpp"
#include "sd2/evaluation.hpp"
#include "sd2/info.hpp"
#include "sd2/model.hpp"
#include "sd2/training.hpp"
#include "sd2/version.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace sd2;

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

py::dict dataset_dict(const data::GeneratedDataset& ds) {
  py::dict d;
  d["kind"] = data::to_string(ds.kind);
  d["x"] = ds.x;
  d["v"] = ds.v;
  d["t"] = ds.t;
  d["y"] = ds.y;
  d["roles"] = std::string(ds.roles.begin(), ds.roles.end());
  d["has_truth"] = ds.has_truth;
  if (ds.has_truth) {
    if (ds.mode() == Mode::kBinary) {
      d["p1"] = ds.p1;
      d["p0"] = ds.p0;
      d["true_ate"] = data::true_ate(ds);
    } else {
      d["sum_a"] = ds.sum_a;
      d["sum_c"] = ds.sum_c;
    }
  }
  return d;
}

train::TrainConfig parse_config(const std::string& text) {
  return train::config_from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_sd2, m) {
  m.doc() = "Native core of the sd2 package";
  m.attr("__version__") = kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("generate_synthetic", [](const std::string& dims, long n, std::uint64_t seed) {
        return dataset_dict(data::gen_binary(data::SyntheticSpec::parse(dims, n, seed)));
      },
      py::arg("dims") = "0-4-4-2-2", py::arg("n") = 10000, py::arg("seed") = 0);

  m.def("generate_demand", [](double alpha, double beta, long n, std::uint64_t seed) {
        data::DemandSpec s;
        s.alpha = alpha;
        s.beta = beta;
        s.n = n;
        s.seed = seed;
        return dataset_dict(data::gen_continuous(s));
      },
      py::arg("alpha") = 0.0, py::arg("beta") = 1.0, py::arg("n") = 10000, py::arg("seed") = 0);

  m.def("read_dataset", [](const std::filesystem::path& dir) { return dataset_dict(data::read_dataset(dir)); });

  m.def("gaussian_kl", [](double mq, double sq, double mp, double sp) { return info::gaussian_kl({mq, sq}, {mp, sp}); },
        py::arg("mean_q"), py::arg("std_q"), py::arg("mean_p"), py::arg("std_p"));
  m.def("bernoulli_kl", &info::bernoulli_kl, py::arg("q"), py::arg("p"));

  m.def("verify_identities", [](std::size_t joints, std::size_t ci_joints, std::uint64_t seed) {
        const auto r = info::run_identity_suite(joints, ci_joints, seed);
        py::dict d;
        d["max_chain_rule_residual"] = r.max_chain_rule_residual;
        d["max_entropy_form_residual"] = r.max_entropy_form_residual;
        d["max_ci_premise_gap"] = r.max_ci_premise_gap;
        d["xor_premise_gap_error"] = r.xor_premise_gap_error;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("joints") = 1000, py::arg("ci_joints") = 100, py::arg("seed") = 0);

  py::class_<Sd2Model>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return checkpoint_load(p); })
      .def("save", [](const Sd2Model& self, const std::filesystem::path& p) { checkpoint_save(self, p); })
      .def_property_readonly("config", [](const Sd2Model& self) { return to_json(self.config()).dump(); })
      .def("predict_outcome", [](const Sd2Model& self, const ad::Tensor& x, double t) {
        return to_vector(self.predict_outcome(x, t));
      })
      .def("attribution", [](const Sd2Model& self, const std::string& roles) {
        const auto r = eval::attribution(self, std::vector<char>(roles.begin(), roles.end()));
        py::dict d;
        for (const auto& f : r.factors) d[py::str(std::string(1, f.factor))] = f.ratio();
        return d;
      });

  // Trains on the config's dataset for one seed and scores the within- and
  // out-of-sample splits. `config` is the JSON text accepted by the CLI.
  m.def("train_and_evaluate", [](const std::string& config, std::uint64_t seed, bool verbose) {
        train::TrainConfig c = parse_config(config);
        c.seed = seed;
        if (c.dataset.empty()) throw ConfigError("config.dataset: missing");
        const auto splits = data::resolve_splits(c.dataset, seed);
        c.arch.input_dim = static_cast<int>(splits.train.x.cols());
        c.arch.mode = splits.train.mode();
        const train::LogFn log = verbose ? train::LogFn(train::log_to_stderr) : train::LogFn([](std::string_view) {});
        auto r = [&] {
          py::gil_scoped_release release;
          return eval::protocol_run(c, splits, log);
        }();
        py::dict d;
        d["within"] = r.within;
        d["out"] = r.out;
        d["selected_epoch"] = r.trained.history.selected_epoch;
        d["epochs"] = r.trained.history.epochs.size();
        d["model"] = std::move(r.trained.model);
        return d;
      },
      py::arg("config"), py::arg("seed") = 0, py::arg("verbose") = false);
}
