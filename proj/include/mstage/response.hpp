#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/imputation.hpp"
#include "mstage/odds.hpp"

#include <map>
#include <memory>
#include <string>

namespace mstage {

struct NuisanceValues {
  double pi = 0.5;
  double m[2] = {0.0, 0.0};  // m[0] is left at 0 when arm 0 has no regression
};

/// Propensity pi(x) = P(A = 1 | x) and outcome regressions m_a(x) = E[Y | A = a, x].
class OutcomeNuisance {
 public:
  virtual ~OutcomeNuisance() = default;
  /// Unclipped propensity; callers go through NuisanceSet::pi.
  virtual double propensity(const Eigen::VectorXd& x) const = 0;
  virtual double regression(int a, const Eigen::VectorXd& x) const = 0;
  virtual bool has_regression(int a) const { return a == 0 || a == 1; }
  /// All three at once; unclipped.
  virtual NuisanceValues evaluate(const Eigen::VectorXd& x) const;
};

/// Nuisances implied by Gaussian components of x given (R, Y, A) with binary
/// Y: p(x | r, y, a) = p(x | 1_d, y, a) p_obs(x_r | r, y, a) / p(x_r | 1_d, y, a),
/// mixed with the empirical cell masses p(r, y, a).
class MixtureNuisance : public OutcomeNuisance {
 public:
  explicit MixtureNuisance(const MissingDataset& ds);
  double propensity(const Eigen::VectorXd& x) const override;
  double regression(int a, const Eigen::VectorXd& x) const override;
  NuisanceValues evaluate(const Eigen::VectorXd& x) const override;
  /// Density p(x | r, y, a) times p(r, y, a).
  double joint(const Eigen::VectorXd& x, PatternMask r, int y, int a) const;

 private:
  struct Component {
    PatternMask r;
    int y = 0, a = 0;
    double mass = 0.0;
    std::unique_ptr<MvNormal> complete;  // x | 1_d, y, a
    std::unique_ptr<MvNormal> complete_marg;  // x_r | 1_d, y, a
    std::unique_ptr<MvNormal> observed;  // x_r | r, y, a
  };
  std::vector<std::shared_ptr<Component>> comps_;
  int dim_ = 0;
};

/// Logistic propensity on (1, x) and logistic (binary Y) or linear outcome
/// regressions within each arm, fitted on completed data.
class RegressionNuisance : public OutcomeNuisance {
 public:
  /// With draws: every record contributes its completions weighted by their
  /// probabilities. Without: complete cases weighted by the IPW weights.
  RegressionNuisance(const MissingDataset& ds, const ImputationDraws* draws,
                     const OddsModelSet* odds);
  double propensity(const Eigen::VectorXd& x) const override;
  double regression(int a, const Eigen::VectorXd& x) const override;
  bool has_regression(int a) const override { return m_coef_.contains(a); }
  bool binary_outcome() const { return binary_; }

 private:
  Eigen::VectorXd pi_coef_;
  std::map<int, Eigen::VectorXd> m_coef_;
  bool binary_ = false;
};

enum class NuisanceKind { automatic, mixture, regression };
NuisanceKind parse_nuisance_kind(const std::string& s);

/// Outcome nuisances plus the imputation draws the RA-R estimators average over.
struct NuisanceSet {
  std::shared_ptr<const OutcomeNuisance> model;
  std::shared_ptr<const ImputationDraws> draws;  // null for IPW-R only analyses
  double clip = 1e-6;

  double pi(const Eigen::VectorXd& x) const;
  double m(int a, const Eigen::VectorXd& x) const { return model->regression(a, x); }
  /// evaluate() with the propensity clipped.
  NuisanceValues values(const Eigen::VectorXd& x) const;
};

/// Builds draws (own patterns, plus complete-record views when `views`) from
/// the imputation model if given, then the outcome nuisances. `automatic`
/// picks the mixture for treatment data with a binary outcome and continuous
/// covariates, and regressions otherwise.
NuisanceSet fit_nuisances(const MissingDataset& ds, const ImputationModel* imp,
                          const OddsModelSet* odds, int M, std::uint64_t seed,
                          NuisanceKind kind = NuisanceKind::automatic, bool views = false,
                          int threads = 1);

enum class CovariateMethod { ipw, ra };
enum class OutcomeMethod { ipw, ra, dr };

struct MeanMethod {
  CovariateMethod cov = CovariateMethod::ra;
  OutcomeMethod out = OutcomeMethod::ra;
  bool multiply_robust = false;
  std::string name() const;
};

/// Accepts "ipw-r:ipw-a", "ra-r:dr-a", ... and "mr".
MeanMethod parse_mean_method(const std::string& s);

struct MeanEstimate {
  double theta = 0.0;
  std::map<std::uint32_t, double> theta_r;  // keyed by pattern bits
  std::string method;
  int dim = 0;
};

/// Estimate of E[Y(arm)] (binary treatment) or E[Y] (missing response, arm 1).
MeanEstimate estimate_mean(const MissingDataset& ds, const NuisanceSet& nuis,
                           const OddsModelSet* odds, const MeanMethod& method, int arm = 1);
MeanEstimate estimate_ate(const MissingDataset& ds, const NuisanceSet& nuis,
                          const OddsModelSet* odds, const MeanMethod& method);

/// Per-record terms q_r of the multiply-robust uncentered influence function,
/// keyed by pattern bits; needs complete-record view draws.
std::vector<std::map<std::uint32_t, double>> mr_contributions(const MissingDataset& ds,
                                                              const NuisanceSet& nuis,
                                                              const OddsModelSet& odds);
MeanEstimate estimate_mean_mr(const MissingDataset& ds, const NuisanceSet& nuis,
                              const OddsModelSet& odds);

struct EifCheck {
  double mean = 0.0;  // weighted mean of sum_r q_r - theta
  double sd = 0.0;
  double n = 0.0;
};
EifCheck eif_mean_zero_check(const MissingDataset& ds, const NuisanceSet& nuis,
                             const OddsModelSet& odds, double theta);

void write_mean_estimate(std::ostream& out, const MeanEstimate& est, bool header = true);

}  // namespace mstage
