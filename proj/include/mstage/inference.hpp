#pragma once

#include "mstage/cox.hpp"
#include "mstage/datamodel.hpp"
#include "mstage/imputation.hpp"
#include "mstage/odds.hpp"
#include "mstage/response.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mstage {

// ---------------------------------------------------------------------------
// One analysis, end to end

enum class Task { cox, mean, ate };
Task parse_task(const std::string& s);
std::string task_name(Task t);

struct EstimatorConfig {
  Task task = Task::cox;
  /// Cox: cc, ipw, mi, mr, transformed-mle. Mean and ATE: "ipw-r:dr-a" style or "mr".
  std::string method = "ipw";
  /// "auto" resolves to cox-em for survival data with binary covariates,
  /// discrete for other binary covariates, gaussian otherwise.
  std::string family = "auto";
  int M = 50;
  std::uint64_t seed = 1;
  int arm = 1;  // mean task only
  OddsOptions odds{};
  NuisanceKind nuisance = NuisanceKind::automatic;
  std::optional<KappaMixture> kappa;
  double rho = 0.0;   // uniform odds tilt
  double zeta = 0.5;  // binary imputation tilt
  double xi = 0.0;    // Gaussian imputation shift
  int threads = 1;

  /// Validates method strings and parameter ranges.
  void validate() const;
};

/// Throws ConfigurationError naming the valid choices.
void check_method(Task task, const std::string& method);
std::vector<std::string> valid_methods(Task task);

ImputationFamily resolve_family(const MissingDataset& ds, const std::string& family);

struct EstimateResult {
  std::vector<std::string> names;
  Eigen::VectorXd estimate;
  bool converged = true;
  std::vector<std::pair<std::string, std::string>> diagnostics;
};

/// Fits every model the method needs (odds, imputation, nuisances) on `ds`
/// and returns the estimate.
EstimateResult run_estimator(const MissingDataset& ds, const EstimatorConfig& cfg);

void write_estimates(std::ostream& out, const EstimateResult& r);
void write_diagnostics(std::ostream& out, const EstimateResult& r);

// ---------------------------------------------------------------------------
// Bootstrap

/// Refits everything on a resampled dataset; the second argument is the
/// replicate seed. Throws to signal a failed replicate.
using FitFunction = std::function<Eigen::VectorXd(const MissingDataset&, std::uint64_t)>;

struct BootstrapReport {
  Eigen::VectorXd point;
  Eigen::MatrixXd replicates;  // successful replicates in index order, one per row
  std::vector<std::size_t> replicate_index;
  Eigen::VectorXd ci_lo, ci_hi;
  int B = 0;
  int failures = 0;
  double alpha = 0.05;
  bool unreliable = false;  // more than 20% failed
};

/// Percentile bootstrap. Replicate b resamples records with RNG substream b
/// of `seed` and fits with the replicate seed substream_seed(seed + 1, b).
/// The point estimate uses `point_seed`.
BootstrapReport bootstrap(const MissingDataset& ds, const FitFunction& fit, int B, double alpha,
                          std::uint64_t seed, std::uint64_t point_seed, int threads = 1);

/// Bootstrap of run_estimator with cfg.seed as the point seed.
BootstrapReport bootstrap_estimator(const MissingDataset& ds, const EstimatorConfig& cfg, int B,
                                    double alpha, std::uint64_t seed);

void write_bootstrap_csv(std::ostream& out, const BootstrapReport& rep,
                         const std::vector<std::string>& names);
void write_replicates_csv(std::ostream& out, const BootstrapReport& rep,
                          const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Sensitivity sweep

enum class SweepParam { rho, zeta, xi };
SweepParam parse_sweep_param(const std::string& s);
std::string sweep_param_name(SweepParam p);
double sweep_baseline(SweepParam p);

/// "lo:hi:steps", evenly spaced with both ends included. Points within 1e-12
/// of `baseline` are snapped onto it.
std::vector<double> parse_grid(const std::string& spec, double baseline);

struct SensitivitySweep {
  SweepParam param = SweepParam::rho;
  std::vector<double> grid;
  std::vector<std::string> names;
  std::vector<BootstrapReport> reports;
};

/// B = 0 computes point estimates only.
SensitivitySweep sensitivity_sweep(const MissingDataset& ds, const EstimatorConfig& base,
                                   SweepParam param, const std::vector<double>& grid, int B,
                                   double alpha, std::uint64_t seed);

/// Columns grid_value,coord,estimate,ci_lo,ci_hi,failures.
void write_sweep_csv(std::ostream& out, const SensitivitySweep& sweep);

}  // namespace mstage
