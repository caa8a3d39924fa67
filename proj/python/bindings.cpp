#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ecgcmr/cohort.hpp"
#include "ecgcmr/config.hpp"
#include "ecgcmr/ecg.hpp"
#include "ecgcmr/error.hpp"
#include "ecgcmr/pipeline.hpp"
#include "ecgcmr/schedule.hpp"
#include "ecgcmr/stats.hpp"

namespace py = pybind11;
using namespace ecgcmr;

namespace {

// JSON crosses the boundary as text; the Python package decodes it.
std::string run_stage(const std::string& command, const std::string& out, const std::string& overrides_json,
                      bool force) {
  pipeline::Options opts;
  if (!overrides_json.empty()) opts.config.merge(nlohmann::json::parse(overrides_json), "python");
  opts.out = out;
  opts.force = force;
  pipeline::StageResult r;
  {
    py::gil_scoped_release release;
    r = pipeline::run(command, opts);
  }
  return nlohmann::json{{"dir", r.dir.string()}, {"manifest", r.manifest}}.dump();
}

py::dict interval_dict(const stats::Interval& ci) {
  py::dict d;
  d["lo"] = ci.lo;
  d["hi"] = ci.hi;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MissingPrerequisite>(m, "MissingPrerequisite", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def("default_config_json", [] { return Config::defaults().dump(); });
  m.def("commands", &pipeline::commands);
  m.def("run_stage", &run_stage, py::arg("command"), py::arg("out"), py::arg("overrides_json") = "",
        py::arg("force") = false);
  m.def("verify_manifest_json",
        [](const std::string& dir) { return pipeline::verify_manifest(dir).dump(); });

  m.def("roc_auc", [](const std::vector<double>& scores, const std::vector<int>& labels) {
    return stats::roc_auc(scores, labels);
  });
  m.def("pearson_r", [](const std::vector<double>& x, const std::vector<double>& y) { return stats::pearson_r(x, y); });
  m.def(
      "wilson_interval",
      [](std::size_t k, std::size_t n, double confidence) { return interval_dict(stats::wilson_interval(k, n, confidence)); },
      py::arg("k"), py::arg("n"), py::arg("confidence") = 0.95);
  m.def("delong_test", [](const std::vector<double>& a, const std::vector<double>& b, const std::vector<int>& labels) {
    const auto r = stats::delong_test(a, b, labels);
    py::dict d;
    d["auc_a"] = r.auc_a;
    d["auc_b"] = r.auc_b;
    d["z"] = r.z;
    d["p"] = r.p ? py::cast(*r.p) : py::none();
    return d;
  });

  m.def(
      "linear_beta_schedule",
      [](int steps, double beta_start, double beta_end) {
        const auto s = linear_beta_schedule(steps, beta_start, beta_end);
        py::dict d;
        d["beta"] = s.beta;
        d["alpha_bar"] = s.alpha_bar;
        d["beta_tilde"] = s.beta_tilde;
        return d;
      },
      py::arg("steps"), py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
  m.def("ddim_timesteps", &ddim_timesteps, py::arg("steps"), py::arg("n_steps"));

  m.def("savgol_coefficients", &ecg::savgol_coefficients, py::arg("window"), py::arg("polyorder"));
  m.def("seasonal_trend",
        [](const std::vector<double>& x, int period) { return ecg::seasonal_trend(x, period); });

  m.def("derive_label", [](double lvm_like, double rvedv_like) {
    cohort::LatentCardiacState s;
    s.lvm_like = lvm_like;
    s.rvedv_like = rvedv_like;
    return cohort::to_string(cohort::derive_label(s));
  });
}
