#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <stdexcept>

#include "ndlc/commands.hpp"
#include "ndlc/config.hpp"
#include "ndlc/diagnostics.hpp"
#include "ndlc/error.hpp"
#include "ndlc/mixture_filter.hpp"
#include "ndlc/model.hpp"
#include "ndlc/rng.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

ndlc::RunConfig config_from(const std::string& layer_json, const std::vector<std::string>& overrides) {
  std::vector<json> layers;
  if (!layer_json.empty()) layers.push_back(json::parse(layer_json));
  for (const std::string& o : overrides) layers.push_back(ndlc::override_layer(o));
  return ndlc::resolve_config(ndlc::layered_config("", layers));
}

std::string run(const std::string& command, const std::string& layer_json, const std::vector<std::string>& overrides) {
  const ndlc::RunConfig cfg = config_from(layer_json, overrides);
  json manifest;
  if (command == "simulate") {
    manifest = ndlc::cmd_simulate(cfg);
  } else if (command == "fit") {
    manifest = ndlc::cmd_fit(cfg);
  } else if (command == "forecast") {
    manifest = ndlc::cmd_forecast(cfg);
  } else if (command == "evaluate") {
    manifest = ndlc::cmd_evaluate(cfg);
  } else if (command == "replicate") {
    manifest = ndlc::cmd_replicate(cfg);
  } else {
    throw ndlc::SpecError("unknown subcommand " + command);
  }
  return manifest.dump();
}

}  // namespace

PYBIND11_MODULE(_ndlc, m) {
  m.doc() = "Regime-switching dynamic factor model: simulation, Gibbs fitting and mixture-filter forecasts";

  py::register_exception<ndlc::SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<ndlc::DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ndlc::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config", [] { return ndlc::default_config_json().dump(); });
  m.def("resolve_config",
        [](const std::string& layer_json, const std::vector<std::string>& overrides) {
          return config_from(layer_json, overrides).to_json().dump();
        },
        py::arg("layer_json") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("run", &run, py::arg("command"), py::arg("layer_json") = "",
        py::arg("overrides") = std::vector<std::string>{},
        py::call_guard<py::gil_scoped_release>());

  m.def("derive_seed", &ndlc::derive_seed, py::arg("base"), py::arg("stream"));
  m.def("rhat", [](const std::vector<std::vector<double>>& chains) {
    std::vector<ndlc::Vector> v;
    for (const auto& c : chains) v.emplace_back(Eigen::Map<const ndlc::Vector>(c.data(), static_cast<Eigen::Index>(c.size())));
    return ndlc::rhat(v);
  });
  m.def("mixture_interval",
        [](const std::vector<double>& weight, const std::vector<double>& mean, const std::vector<double>& var,
           double level) {
          if (weight.size() != mean.size() || weight.size() != var.size()) {
            throw ndlc::SpecError("weight, mean and var must have equal length");
          }
          ndlc::Mixture mix;
          for (std::size_t k = 0; k < weight.size(); ++k) mix.add(weight[k], mean[k], var[k]);
          return mix.interval(level);
        },
        py::arg("weight"), py::arg("mean"), py::arg("var"), py::arg("level") = 0.95);
}
