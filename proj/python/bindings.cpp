#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "opsense/error.hpp"
#include "opsense/io.hpp"
#include "opsense/ntk.hpp"
#include "opsense/oracle.hpp"
#include "opsense/search.hpp"

namespace py = pybind11;
using opsense::json;

namespace {

// Python objects cross the boundary as JSON text through the stdlib json module.
json to_json(const py::handle& obj) {
  const auto dumps = py::module_::import("json").attr("dumps");
  return json::parse(dumps(obj).cast<std::string>());
}

py::object from_json(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

opsense::RunConfig run_config(const py::object& config) {
  return opsense::run_config_from_json(config.is_none() ? json::object() : to_json(config));
}

py::dict search(const py::object& config, std::uint64_t seed) {
  const auto rc = run_config(config);
  opsense::SearchResult result;
  {
    py::gil_scoped_release release;
    result = opsense::run_search(rc.search, seed);
  }
  json view = opsense::run_config_to_json(rc);
  view.erase("out");
  view.erase("workers");
  json trace = opsense::trace_to_json(result.trace, view, seed);
  trace["wall_time_ms"] = result.trace.wall_time_ms;
  return from_json(trace);
}

py::dict zeros_scores(const py::object& config, std::uint64_t seed, std::size_t round) {
  const auto rc = run_config(config);
  const auto net = opsense::Supernet::init(rc.search.space, seed, rc.search.alpha_scale);
  std::optional<opsense::Batch> batch;
  if (rc.search.variant != opsense::ScoreVariant::data_agnostic) batch = opsense::search_batch(rc.search, seed);
  const auto table = opsense::search_scores(rc.search, net, batch ? &*batch : nullptr, seed, round);
  return from_json(opsense::score_table_to_json(table, net));
}

std::vector<std::string> enumerate_space(const py::object& space, std::size_t cap) {
  std::vector<std::string> out;
  for (const auto& g : opsense::enumerate_space(opsense::space_from_json(to_json(space)), cap)) out.push_back(g.str());
  return out;
}

py::dict ntk(const py::object& space_obj, py::array_t<double, py::array::c_style | py::array::forcecast> x,
             std::uint64_t seed, double alpha_scale) {
  const auto space = opsense::space_from_json(to_json(space_obj));
  opsense::Shape shape(x.shape(), x.shape() + x.ndim());
  opsense::Tensor input(shape);
  std::copy(x.data(), x.data() + x.size(), input.data().begin());
  const auto net = opsense::Supernet::init(space, seed, alpha_scale);
  const auto report = opsense::ntk_matrix(net, input);
  py::dict d;
  d["theta"] = report.theta;
  d["eigenvalues"] = report.eigenvalues;
  d["trace_norm"] = report.trace_norm;
  py::dict blocks;
  for (const auto& b : report.per_block) blocks[py::str(b.name)] = b.trace_norm;
  d["per_block"] = blocks;
  return d;
}

py::dict width_scaling(double rho, std::size_t base_width, const std::vector<std::uint64_t>& seeds) {
  opsense::WidthScalingConfig c;
  c.rho = rho;
  c.base_width = base_width;
  c.seeds = seeds;
  opsense::WidthScalingResult r;
  {
    py::gil_scoped_release release;
    r = opsense::check_width_scaling(c);
  }
  py::dict d;
  d["rho"] = r.rho;
  d["ratios"] = r.ratios;
  d["mean"] = r.mean;
  d["stddev"] = r.stddev;
  d["expected"] = r.expected;
  return d;
}

py::dict sensitivity_sweep(const std::string& variant, std::size_t nets, std::uint64_t seed) {
  opsense::SensitivitySweepConfig c;
  c.variant = opsense::parse_variant(variant);
  c.nets = nets;
  c.seed = seed;
  opsense::SensitivitySweepResult r;
  {
    py::gil_scoped_release release;
    r = opsense::sensitivity_sweep(c);
  }
  py::dict d;
  d["variant"] = std::string(opsense::variant_name(r.variant));
  d["nets"] = r.nets;
  d["checks"] = r.checks;
  d["violations"] = r.violations;
  d["sigma_violations"] = r.sigma_violations;
  d["max_slack"] = r.max_slack;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Training-free architecture search and NTK checks";

  auto base = py::register_exception<opsense::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<opsense::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<opsense::ParseError>(m, "ParseError", base.ptr());
  py::register_exception<opsense::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<opsense::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<opsense::StateError>(m, "StateError", base.ptr());
  py::register_exception<opsense::SearchAborted>(m, "SearchAborted", base.ptr());

  m.def("search", &search, py::arg("config") = py::none(), py::arg("seed") = 0,
        "Run the pruning search; returns the trace as a dict (config keys as in the CLI).");
  m.def("zeros_scores", &zeros_scores, py::arg("config") = py::none(), py::arg("seed") = 0, py::arg("round") = 0,
        "Score table of a freshly initialized supernet.");
  m.def("canonical_genotype", [](const std::string& text) { return opsense::Genotype::parse(text).str(); },
        py::arg("text"));
  m.def("space_size", [](const py::object& space) { return opsense::space_size(opsense::space_from_json(to_json(space))); },
        py::arg("space"));
  m.def("enumerate_space", &enumerate_space, py::arg("space"), py::arg("cap") = opsense::kDefaultEnumerationCap);
  m.def("ntk", &ntk, py::arg("space"), py::arg("x"), py::arg("seed") = 0, py::arg("alpha_scale") = 1e-3,
        "Empirical NTK of the sum of logits over every alive weight block.");
  m.def("width_scaling", &width_scaling, py::arg("rho"), py::arg("base_width") = 1024,
        py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  m.def("sensitivity_sweep", &sensitivity_sweep, py::arg("variant") = "vanilla", py::arg("nets") = 50,
        py::arg("seed") = 0);
  m.def("config_digest", [](const py::object& obj) { return opsense::config_digest(to_json(obj)); }, py::arg("obj"));
}
