#include "mstage/cli.hpp"
#include "mstage/cox.hpp"
#include "mstage/inference.hpp"
#include "mstage/odds.hpp"
#include "mstage/response.hpp"
#include "mstage/simgen.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>

namespace py = pybind11;
using namespace mstage;

namespace {

MissingDataset from_arrays(const std::string& schema_flag, const Eigen::MatrixXd& x,
                           const Eigen::VectorXi& a, const Eigen::MatrixXd& w,
                           std::optional<Eigen::VectorXd> weights) {
  const Schema schema = parse_schema_flag(schema_flag);
  const Eigen::Index n = x.rows();
  if (a.size() != n || w.rows() != n || (weights && weights->size() != n))
    throw PreconditionError("all arrays need one row per record");
  if (x.cols() != schema.dim()) throw PreconditionError("x has the wrong number of columns");
  std::vector<ObservedRecord> recs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& rec = recs[static_cast<std::size_t>(i)];
    rec.x = x.row(i).transpose();
    std::uint32_t bits = 0;
    for (int j = 0; j < schema.dim(); ++j)
      if (!std::isnan(rec.x(j))) bits |= 1U << j;
    rec.mask = PatternMask(bits, schema.dim());
    rec.a = a(i);
    const auto& obs = schema.outcomes_for(rec.a);
    rec.w.resize(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) rec.w(static_cast<Eigen::Index>(k)) = w(i, obs[k]);
    if (weights) rec.weight = (*weights)(i);
  }
  return MissingDataset(schema, std::move(recs));
}

py::dict to_arrays(const MissingDataset& ds) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto q = static_cast<Eigen::Index>(ds.schema().outcomes.size());
  Eigen::MatrixXd x(n, ds.dim());
  Eigen::MatrixXd w = Eigen::MatrixXd::Constant(n, q, std::numeric_limits<double>::quiet_NaN());
  Eigen::VectorXi a(n), mask(n);
  Eigen::VectorXd weight(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = ds[static_cast<std::size_t>(i)];
    x.row(i) = rec.x.transpose();
    a(i) = rec.a;
    mask(i) = static_cast<int>(rec.mask.bits());
    weight(i) = rec.weight;
    const auto& obs = ds.schema().outcomes_for(rec.a);
    for (std::size_t k = 0; k < obs.size(); ++k) w(i, obs[k]) = rec.w(static_cast<Eigen::Index>(k));
  }
  py::dict d;
  d["x"] = x;
  d["a"] = a;
  d["w"] = w;
  d["mask"] = mask;
  d["weight"] = weight;
  d["covariates"] = ds.schema().covariates;
  d["outcomes"] = ds.schema().outcomes;
  return d;
}

EstimatorConfig make_config(const std::string& task, const std::string& method, int M,
                            std::uint64_t seed, const std::string& family, bool interactions,
                            double rho, double zeta, double xi, int arm, const std::string& nuisance) {
  EstimatorConfig c;
  c.task = parse_task(task);
  c.method = method;
  c.M = M;
  c.seed = seed;
  c.family = family;
  c.odds.interactions = interactions;
  c.rho = rho;
  c.zeta = zeta;
  c.xi = xi;
  c.arm = arm;
  c.nuisance = parse_nuisance_kind(nuisance);
  return c;
}

py::dict report_dict(const BootstrapReport& rep, const std::vector<std::string>& names) {
  py::dict d;
  d["names"] = names;
  d["point"] = rep.point;
  d["ci_lo"] = rep.ci_lo;
  d["ci_hi"] = rep.ci_hi;
  d["replicates"] = rep.replicates;
  d["failures"] = rep.failures;
  d["B"] = rep.B;
  d["unreliable"] = rep.unreliable;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multistage estimators for nonmonotone missing covariates under CCMV";

  py::register_exception<Error>(m, "MstageError", PyExc_RuntimeError);

  py::class_<MissingDataset>(m, "Dataset")
      .def_property_readonly("size", &MissingDataset::size)
      .def_property_readonly("dim", &MissingDataset::dim)
      .def("__len__", &MissingDataset::size)
      .def("patterns",
           [](const MissingDataset& ds) {
             std::vector<std::tuple<std::string, int, long, double>> out;
             for (const auto& c : pattern_cells(ds)) out.emplace_back(c.mask.to_string(), c.a, c.count, c.weight);
             return out;
           },
           "(pattern, outcome pattern, count, weight) for every occurring cell")
      .def("to_arrays", &to_arrays)
      .def("write_csv", [](const MissingDataset& ds, const std::string& path) { write_csv(path, ds); });

  m.def("read_csv", [](const std::string& path, const std::string& schema) {
    return load_csv(path, parse_schema_flag(schema));
  }, py::arg("path"), py::arg("schema"));
  m.def("from_arrays", &from_arrays, py::arg("schema"), py::arg("x"), py::arg("a"), py::arg("w"),
        py::arg("weights") = py::none(),
        "NaN entries of x mark missing covariates; w holds every outcome column (unobserved ones are ignored)");

  m.def("gen_cox", [](std::size_t n, std::uint64_t seed, double corr, bool masks) {
    CoxSimSpec s;
    s.corr = corr;
    return gen_cox(s, n, seed, masks);
  }, py::arg("n"), py::arg("seed"), py::arg("corr") = 0.3, py::arg("apply_masks") = true);
  m.def("gen_binary_treat", [](std::size_t n, std::uint64_t seed, bool masks) {
    return gen_binary_treat(BinaryTreatSimSpec::standard(), n, seed, masks);
  }, py::arg("n"), py::arg("seed"), py::arg("apply_masks") = true);
  m.def("true_ate", [](std::size_t draws, std::uint64_t seed) {
    return true_ate_mc(BinaryTreatSimSpec::standard(), draws, seed, default_threads());
  }, py::arg("draws") = 10'000'000, py::arg("seed") = 1);

  m.def("ipw_weights", [](const MissingDataset& ds, bool interactions) {
    OddsOptions o;
    o.interactions = interactions;
    return ipw_weights(OddsModelSet::fit(ds, o), ds);
  }, py::arg("ds"), py::arg("interactions") = false);

  m.def("estimate", [](const MissingDataset& ds, const std::string& task, const std::string& method,
                       int M, std::uint64_t seed, const std::string& family, bool interactions,
                       double rho, double zeta, double xi, int arm, const std::string& nuisance) {
    const auto r = run_estimator(ds, make_config(task, method, M, seed, family, interactions, rho,
                                                 zeta, xi, arm, nuisance));
    py::dict d;
    d["names"] = r.names;
    d["estimate"] = r.estimate;
    d["converged"] = r.converged;
    py::dict diag;
    for (const auto& [k, v] : r.diagnostics) diag[py::str(k)] = v;
    d["diagnostics"] = diag;
    return d;
  }, py::arg("ds"), py::arg("task"), py::arg("method"), py::arg("M") = 50, py::arg("seed") = 1,
     py::arg("family") = "auto", py::arg("interactions") = false, py::arg("rho") = 0.0,
     py::arg("zeta") = 0.5, py::arg("xi") = 0.0, py::arg("arm") = 1, py::arg("nuisance") = "auto");

  m.def("bootstrap", [](const MissingDataset& ds, const std::string& task, const std::string& method,
                        int B, double alpha, std::uint64_t seed, int M, bool interactions) {
    auto cfg = make_config(task, method, M, seed, "auto", interactions, 0.0, 0.5, 0.0, 1, "auto");
    const auto names = run_estimator(ds, cfg).names;
    return report_dict(bootstrap_estimator(ds, cfg, B, alpha, seed), names);
  }, py::arg("ds"), py::arg("task"), py::arg("method"), py::arg("B") = 500, py::arg("alpha") = 0.05,
     py::arg("seed") = 1, py::arg("M") = 50, py::arg("interactions") = false);

  m.def("sweep", [](const MissingDataset& ds, const std::string& task, const std::string& method,
                    const std::string& param, std::vector<double> grid, int B, std::uint64_t seed,
                    int M, bool interactions) {
    auto cfg = make_config(task, method, M, seed, "auto", interactions, 0.0, 0.5, 0.0, 1, "auto");
    const auto sw = sensitivity_sweep(ds, cfg, parse_sweep_param(param), grid, B, 0.05, seed);
    std::vector<std::tuple<double, std::string, double, double, double>> rows;
    for (std::size_t k = 0; k < sw.grid.size(); ++k)
      for (Eigen::Index j = 0; j < sw.reports[k].point.size(); ++j)
        rows.emplace_back(sw.grid[k], sw.names[j], sw.reports[k].point(j), sw.reports[k].ci_lo(j),
                          sw.reports[k].ci_hi(j));
    return rows;
  }, py::arg("ds"), py::arg("task"), py::arg("method"), py::arg("param"), py::arg("grid"),
     py::arg("B") = 0, py::arg("seed") = 1, py::arg("M") = 50, py::arg("interactions") = false);

  m.def("tilt_binary", &tilt_binary, py::arg("p"), py::arg("zeta"));
  m.def("tilt_gaussian", &tilt_gaussian, py::arg("mu"), py::arg("s2"), py::arg("xi"));
  m.def("beta_from_gamma", &beta_from_gamma, py::arg("gamma"));

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "mstage");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"), "Runs the command-line interface in-process and returns its exit status");
}
