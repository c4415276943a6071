#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "perffl/config_io.hpp"
#include "perffl/environments.hpp"
#include "perffl/federation.hpp"
#include "perffl/harness.hpp"
#include "perffl/linalg.hpp"

namespace py = pybind11;

namespace {

perffl::ExperimentConfig with_overrides(const std::string& yaml, const std::vector<std::string>& overrides) {
  perffl::ExperimentConfig cfg = perffl::parse_config(yaml);
  for (const auto& o : overrides) perffl::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

py::dict trace_dict(const perffl::RunTrace& tr) {
  std::vector<std::size_t> t, enrolled, removed, n_total;
  std::vector<double> loss;
  std::vector<perffl::Vector> theta;
  for (const auto& r : tr.rows) {
    t.push_back(r.t);
    loss.push_back(r.loss);
    theta.push_back(r.theta);
    enrolled.push_back(r.enrolled);
    removed.push_back(r.removed_total);
    n_total.push_back(r.n_total);
  }
  py::dict d;
  d["t"] = t;
  d["loss"] = loss;
  d["theta"] = theta;
  d["enrolled"] = enrolled;
  d["removed_total"] = removed;
  d["n_total"] = n_total;
  return d;
}

py::dict summary_row(const perffl::SummaryRow& r) {
  py::dict d;
  d["preset"] = r.preset;
  d["sweep"] = r.sweep;
  d["series"] = r.series;
  d["metric"] = r.metric;
  d["seeds"] = r.seeds;
  d["mean"] = r.mean;
  d["std"] = r.std;
  d["convergence_mean"] = r.convergence_mean;
  d["samples_mean"] = r.samples_mean;
  return d;
}

std::vector<std::vector<double>> to_rows(const perffl::DenseMatrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

}  // namespace

PYBIND11_MODULE(_perffl, m) {
  m.doc() = "Performative federated learning simulator";

  py::register_exception<perffl::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<perffl::RunError>(m, "RunError", PyExc_RuntimeError);
  py::register_exception<perffl::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("preset_names", &perffl::preset_names, "Names of the built-in presets.");

  m.def(
      "normalize_config",
      [](const std::string& yaml, const std::vector<std::string>& overrides) {
        return perffl::dump_config(with_overrides(yaml, overrides));
      },
      py::arg("yaml"), py::arg("overrides") = std::vector<std::string>{},
      "Parse, override and validate a YAML config; returns the canonical YAML.");

  m.def(
      "run_config",
      [](const std::string& yaml, const std::vector<std::string>& overrides) {
        const perffl::ExperimentConfig cfg = with_overrides(yaml, overrides);
        perffl::RunTrace tr;
        {
          py::gil_scoped_release release;
          tr = perffl::run_experiment(cfg);
        }
        return trace_dict(tr);
      },
      py::arg("yaml"), py::arg("overrides") = std::vector<std::string>{},
      "Run one configuration and return its trace as a dict of columns.");

  m.def(
      "run_preset",
      [](const std::string& name, const std::vector<std::string>& overrides,
         std::optional<std::vector<std::uint64_t>> seeds, std::optional<std::filesystem::path> out_dir) {
        perffl::PresetRunOptions opts;
        opts.overrides = overrides;
        opts.seeds = std::move(seeds);
        opts.out_dir = std::move(out_dir);
        perffl::PresetResult res;
        {
          py::gil_scoped_release release;
          res = perffl::run_preset(name, opts);
        }
        py::list rows;
        for (const auto& r : res.summary.rows) rows.append(summary_row(r));
        return rows;
      },
      py::arg("name"), py::arg("overrides") = std::vector<std::string>{}, py::arg("seeds") = py::none(),
      py::arg("out_dir") = py::none(), "Run a preset sweep and return its summary rows.");

  m.def(
      "reference_optimum",
      [](const std::string& yaml, const std::vector<std::string>& overrides) {
        return perffl::reference_optimum(with_overrides(yaml, overrides));
      },
      py::arg("yaml"), py::arg("overrides") = std::vector<std::string>{},
      "Performative optimum of a configuration.");

  m.def(
      "pseudo_inverse",
      [](const std::vector<std::vector<double>>& rows) {
        return to_rows(perffl::pseudo_inverse(perffl::DenseMatrix::from_rows(rows)));
      },
      py::arg("matrix"), "Moore-Penrose pseudo-inverse of a row-major matrix.");

  m.def(
      "spearman",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const auto s = perffl::spearman(x, y);
        return py::make_tuple(s.rho, s.p_value);
      },
      py::arg("x"), py::arg("y"), "Spearman rank correlation and two-sided p-value.");
}
