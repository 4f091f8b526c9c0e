#include "mstage/inference.hpp"

#include "mstage/errors.hpp"
#include "mstage/numerics.hpp"
#include "mstage/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace mstage {

Task parse_task(const std::string& s) {
  if (s == "cox") return Task::cox;
  if (s == "mean") return Task::mean;
  if (s == "ate") return Task::ate;
  throw ConfigurationError("unknown task '" + s + "' (valid: cox, mean, ate)");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::cox: return "cox";
    case Task::mean: return "mean";
    case Task::ate: return "ate";
  }
  return "?";
}

std::vector<std::string> valid_methods(Task task) {
  if (task == Task::cox) return {"cc", "ipw", "mi", "mr", "transformed-mle"};
  std::vector<std::string> out;
  for (const char* c : {"ipw-r", "ra-r"})
    for (const char* o : {"ipw-a", "ra-a", "dr-a"}) out.push_back(std::string(c) + ":" + o);
  if (task == Task::mean) out.push_back("mr");
  return out;
}

void check_method(Task task, const std::string& method) {
  const auto valid = valid_methods(task);
  if (std::find(valid.begin(), valid.end(), method) != valid.end()) return;
  std::string list;
  for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
  throw ConfigurationError("unknown method '" + method + "' for task " + task_name(task) +
                           " (valid: " + list + ")");
}

void EstimatorConfig::validate() const {
  check_method(task, method);
  if (family != "auto") parse_family(family);
  if (M < 1) throw ConfigurationError("M must be at least 1");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw ConfigurationError("zeta must lie in [0, 1]");
  if (!std::isfinite(rho) || !std::isfinite(xi)) throw ConfigurationError("tilts must be finite");
  if (arm != 0 && arm != 1) throw ConfigurationError("arm must be 0 or 1");
  if (threads < 1) throw ConfigurationError("threads must be at least 1");
}

ImputationFamily resolve_family(const MissingDataset& ds, const std::string& family) {
  if (family != "auto") return parse_family(family);
  if (ds.binary_covariates())
    return ds.schema().kind == SchemaKind::survival ? ImputationFamily::cox_em
                                                    : ImputationFamily::discrete;
  return ImputationFamily::gaussian;
}

namespace {

bool method_uses_odds(const EstimatorConfig& cfg, ImputationFamily fam) {
  if (cfg.task == Task::cox) {
    if (cfg.method == "cc") return false;
    if (cfg.method == "mi") return fam == ImputationFamily::cox_em;
    return true;
  }
  return cfg.method == "mr" || cfg.method.rfind("ipw-r", 0) == 0;
}

bool method_uses_imputation(const EstimatorConfig& cfg) {
  if (cfg.task == Task::cox) return cfg.method == "mi" || cfg.method == "mr";
  return cfg.method == "mr" || cfg.method.rfind("ra-r", 0) == 0;
}

void add_cox_diagnostics(EstimateResult& r, const CoxFit& fit) {
  std::ostringstream os;
  write_cox_diagnostics(os, fit);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    std::string key = line.substr(0, comma);
    if (key == "method") key = "cox_method";
    r.diagnostics.emplace_back(key, line.substr(comma + 1));
  }
}

}  // namespace

EstimateResult run_estimator(const MissingDataset& ds, const EstimatorConfig& cfg) {
  cfg.validate();
  const SchemaKind kind = ds.schema().kind;
  if (cfg.task == Task::cox && kind != SchemaKind::survival)
    throw ConfigurationError("the cox task needs survival data");
  if (cfg.task != Task::cox && kind == SchemaKind::survival)
    throw ConfigurationError("mean and ate tasks need treatment or missing-response data");

  const long warnings_before = warning_count();
  const ImputationFamily fam = resolve_family(ds, cfg.family);
  const bool need_imp = method_uses_imputation(cfg);
  const bool need_odds = method_uses_odds(cfg, fam) || (need_imp && fam == ImputationFamily::cox_em);

  OddsModelSet odds;
  if (need_odds) {
    odds = OddsModelSet::fit(ds, cfg.odds);
    if (cfg.kappa) odds.set_kappa(*cfg.kappa);
    if (cfg.rho != 0.0) odds.set_uniform_tilt(cfg.rho);
  }
  std::unique_ptr<ImputationModel> imp;
  if (need_imp) {
    ImputationOptions io;
    io.odds = &odds;
    imp = fit_imputation(ds, fam, io);
    if (cfg.zeta != 0.5) imp->set_zeta(cfg.zeta);
    if (cfg.xi != 0.0) imp->set_xi(cfg.xi);
  }

  EstimateResult r;
  r.diagnostics.emplace_back("task", task_name(cfg.task));
  r.diagnostics.emplace_back("method", cfg.method);
  if (need_imp) r.diagnostics.emplace_back("family", family_name(fam));

  if (cfg.task == Task::cox) {
    CoxOptions co;
    co.threads = cfg.threads;
    r.names = ds.schema().covariates;
    if (cfg.method == "transformed-mle") {
      const auto fit = fit_transformed_mle(ds, odds);
      r.estimate = fit.beta;
      r.converged = fit.converged;
      for (int b = 0; b < 4; ++b)
        r.diagnostics.emplace_back("gamma_" + PatternMask(b, 2).to_string(), format_double(fit.gamma[b]));
      r.diagnostics.emplace_back("nu2", format_double(fit.nu2));
      r.diagnostics.emplace_back("iterations", std::to_string(fit.iterations));
      r.diagnostics.emplace_back("converged", fit.converged ? "1" : "0");
    } else {
      CoxFit fit;
      if (cfg.method == "cc") fit = fit_cox_complete_case(ds, co);
      else if (cfg.method == "ipw") fit = fit_cox_ipw(ds, odds, co);
      else if (cfg.method == "mi") fit = fit_cox_mi(ds, *imp, cfg.M, cfg.seed, co);
      else fit = fit_cox_mr(ds, odds, *imp, cfg.M, cfg.seed, co);
      r.estimate = fit.beta;
      r.converged = fit.converged;
      add_cox_diagnostics(r, fit);
    }
  } else {
    const MeanMethod mm = parse_mean_method(cfg.method);
    const NuisanceSet nuis = fit_nuisances(ds, imp.get(), need_odds ? &odds : nullptr, cfg.M,
                                           cfg.seed, cfg.nuisance, mm.multiply_robust, cfg.threads);
    r.diagnostics.emplace_back(
        "nuisance", dynamic_cast<const MixtureNuisance*>(nuis.model.get()) ? "mixture" : "regression");
    const OddsModelSet* op = need_odds ? &odds : nullptr;
    MeanEstimate est;
    if (cfg.task == Task::ate) {
      est = estimate_ate(ds, nuis, op, mm);
      r.names = {"ate"};
    } else {
      est = estimate_mean(ds, nuis, op, mm, cfg.arm);
      r.names = {kind == SchemaKind::missing_response ? "mean" : "mean_a" + std::to_string(cfg.arm)};
    }
    r.estimate = Eigen::VectorXd::Constant(1, est.theta);
    for (const auto& [bits, t] : est.theta_r)
      r.diagnostics.emplace_back("theta_" + PatternMask(bits, ds.dim()).to_string(), format_double(t));
  }
  r.diagnostics.emplace_back("warnings", std::to_string(warning_count() - warnings_before));
  return r;
}

void write_estimates(std::ostream& out, const EstimateResult& r) {
  out << "coefficient,estimate\n";
  for (Eigen::Index k = 0; k < r.estimate.size(); ++k)
    out << r.names[k] << ',' << format_double(r.estimate(k)) << '\n';
}

void write_diagnostics(std::ostream& out, const EstimateResult& r) {
  out << "key,value\n";
  for (const auto& [k, v] : r.diagnostics) out << k << ',' << v << '\n';
}

// ---------------------------------------------------------------------------

BootstrapReport bootstrap(const MissingDataset& ds, const FitFunction& fit, int B, double alpha,
                          std::uint64_t seed, std::uint64_t point_seed, int threads) {
  if (B < 2) throw PreconditionError("the bootstrap needs B >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError("alpha must lie in (0, 1)");
  BootstrapReport rep;
  rep.B = B;
  rep.alpha = alpha;
  rep.point = fit(ds, point_seed);
  const Eigen::Index p = rep.point.size();

  std::vector<std::optional<Eigen::VectorXd>> results(static_cast<std::size_t>(B));
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
    Rng rng = Rng::substream(seed, b);
    std::vector<std::size_t> idx(ds.size());
    for (auto& i : idx) i = rng.index(ds.size());
    try {
      const MissingDataset resampled = ds.subset(idx);
      Eigen::VectorXd est = fit(resampled, substream_seed(seed + 1, b));
      if (est.size() == p && est.allFinite()) results[b] = std::move(est);
    } catch (const Error&) {
      // dropped and counted below
    }
  });

  std::vector<Eigen::VectorXd> ok;
  for (std::size_t b = 0; b < results.size(); ++b) {
    if (results[b]) {
      ok.push_back(*results[b]);
      rep.replicate_index.push_back(b);
    }
  }
  rep.failures = B - static_cast<int>(ok.size());
  rep.unreliable = rep.failures > 0.2 * B;
  if (rep.unreliable) warn("more than 20% of bootstrap replicates failed");

  rep.replicates.resize(static_cast<Eigen::Index>(ok.size()), p);
  for (std::size_t k = 0; k < ok.size(); ++k) rep.replicates.row(static_cast<Eigen::Index>(k)) = ok[k];
  rep.ci_lo = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  rep.ci_hi = rep.ci_lo;
  if (!ok.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) {
      std::vector<double> col(ok.size());
      for (std::size_t k = 0; k < ok.size(); ++k) col[k] = ok[k](j);
      rep.ci_lo(j) = quantile_type7(col, alpha / 2.0);
      rep.ci_hi(j) = quantile_type7(col, 1.0 - alpha / 2.0);
    }
  }
  return rep;
}

namespace {

FitFunction estimator_fit(const EstimatorConfig& cfg) {
  return [cfg](const MissingDataset& d, std::uint64_t s) {
    EstimatorConfig c = cfg;
    c.seed = s;
    c.threads = 1;
    const auto r = run_estimator(d, c);
    if (!r.converged) throw DegenerateError("estimator did not converge");
    return r.estimate;
  };
}

std::vector<std::string> estimate_names(const MissingDataset& ds, const EstimatorConfig& cfg) {
  if (cfg.task == Task::cox) return ds.schema().covariates;
  if (cfg.task == Task::ate) return {"ate"};
  return {ds.schema().kind == SchemaKind::missing_response ? "mean" : "mean_a" + std::to_string(cfg.arm)};
}

}  // namespace

BootstrapReport bootstrap_estimator(const MissingDataset& ds, const EstimatorConfig& cfg, int B,
                                    double alpha, std::uint64_t seed) {
  return bootstrap(ds, estimator_fit(cfg), B, alpha, seed, cfg.seed, cfg.threads);
}

void write_bootstrap_csv(std::ostream& out, const BootstrapReport& rep,
                         const std::vector<std::string>& names) {
  out << "coord,estimate,ci_lo,ci_hi,failures,unreliable\n";
  for (Eigen::Index j = 0; j < rep.point.size(); ++j)
    out << names[j] << ',' << format_double(rep.point(j)) << ',' << format_double(rep.ci_lo(j)) << ','
        << format_double(rep.ci_hi(j)) << ',' << rep.failures << ',' << (rep.unreliable ? 1 : 0)
        << '\n';
}

void write_replicates_csv(std::ostream& out, const BootstrapReport& rep,
                          const std::vector<std::string>& names) {
  out << "replicate";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (Eigen::Index k = 0; k < rep.replicates.rows(); ++k) {
    out << rep.replicate_index[k];
    for (Eigen::Index j = 0; j < rep.replicates.cols(); ++j) out << ',' << format_double(rep.replicates(k, j));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

SweepParam parse_sweep_param(const std::string& s) {
  if (s == "rho") return SweepParam::rho;
  if (s == "zeta") return SweepParam::zeta;
  if (s == "xi") return SweepParam::xi;
  throw ConfigurationError("unknown sensitivity parameter '" + s + "' (valid: rho, zeta, xi)");
}

std::string sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::rho: return "rho";
    case SweepParam::zeta: return "zeta";
    case SweepParam::xi: return "xi";
  }
  return "?";
}

double sweep_baseline(SweepParam p) { return p == SweepParam::zeta ? 0.5 : 0.0; }

std::vector<double> parse_grid(const std::string& spec, double baseline) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  if (parts.size() != 3) throw ConfigurationError("grid must look like lo:hi:steps");
  const double lo = parse_double(parts[0]), hi = parse_double(parts[1]);
  int steps = 0;
  try {
    steps = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw ConfigurationError("grid step count must be an integer");
  }
  if (steps < 1) throw ConfigurationError("grid needs at least one point");
  if (steps == 1 && lo != hi) throw ConfigurationError("a one-point grid needs lo == hi");
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    double v = steps == 1 ? lo : lo + (hi - lo) * k / (steps - 1);
    if (std::abs(v - baseline) < 1e-12) v = baseline;
    g[static_cast<std::size_t>(k)] = v;
  }
  return g;
}

SensitivitySweep sensitivity_sweep(const MissingDataset& ds, const EstimatorConfig& base,
                                   SweepParam param, const std::vector<double>& grid, int B,
                                   double alpha, std::uint64_t seed) {
  base.validate();
  const double baseline = sweep_baseline(param);
  if (grid.empty()) throw PreconditionError("empty sensitivity grid");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw PreconditionError("sensitivity grid must be strictly increasing");
  if (std::find(grid.begin(), grid.end(), baseline) == grid.end())
    throw PreconditionError("sensitivity grid must contain the baseline value " + format_double(baseline));
  if (B == 1 || B < 0) throw PreconditionError("the sweep needs B = 0 or B >= 2");

  const ImputationFamily fam = resolve_family(ds, base.family);
  switch (param) {
    case SweepParam::rho:
      if (!method_uses_odds(base, fam))
        throw ConfigurationError("a rho sweep needs a method that uses the complete odds");
      break;
    case SweepParam::zeta:
      if (!method_uses_imputation(base) || fam == ImputationFamily::gaussian)
        throw ConfigurationError("a zeta sweep needs imputation over binary covariates");
      break;
    case SweepParam::xi:
      if (!method_uses_imputation(base) || fam != ImputationFamily::gaussian)
        throw ConfigurationError("a xi sweep needs Gaussian imputation of continuous covariates");
      break;
  }

  SensitivitySweep sw;
  sw.param = param;
  sw.grid = grid;
  sw.names = estimate_names(ds, base);
  for (double g : grid) {
    EstimatorConfig cfg = base;
    if (param == SweepParam::rho) cfg.rho = g;
    else if (param == SweepParam::zeta) cfg.zeta = g;
    else cfg.xi = g;
    if (B == 0) {
      const auto r = run_estimator(ds, cfg);
      BootstrapReport rep;
      rep.point = r.estimate;
      rep.alpha = alpha;
      rep.ci_lo = Eigen::VectorXd::Constant(r.estimate.size(), std::numeric_limits<double>::quiet_NaN());
      rep.ci_hi = rep.ci_lo;
      sw.reports.push_back(std::move(rep));
    } else {
      sw.reports.push_back(bootstrap_estimator(ds, cfg, B, alpha, seed));
    }
  }
  return sw;
}

void write_sweep_csv(std::ostream& out, const SensitivitySweep& sweep) {
  out << "grid_value,coord,estimate,ci_lo,ci_hi,failures\n";
  for (std::size_t k = 0; k < sweep.grid.size(); ++k) {
    const auto& rep = sweep.reports[k];
    for (Eigen::Index j = 0; j < rep.point.size(); ++j)
      out << format_double(sweep.grid[k]) << ',' << sweep.names[j] << ','
          << format_double(rep.point(j)) << ',' << format_double(rep.ci_lo(j)) << ','
          << format_double(rep.ci_hi(j)) << ',' << rep.failures << '\n';
  }
}

}  // namespace mstage
