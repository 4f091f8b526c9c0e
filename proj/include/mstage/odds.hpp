#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/numerics.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

namespace mstage {

struct OddsOptions {
  bool interactions = false;  // add pairwise products of the non-intercept features
  bool drop_outcome = false;  // omit W_a from the features (a deliberately wrong model)
  double clip = 1e6;
  LogisticOptions logistic{};
};

/// Mixture weights of the beyond-CCMV restriction for R = 00 with d = 2.
struct KappaMixture {
  double k1 = 0.0, k2 = 0.0, k3 = 1.0;
  KappaMixture() = default;
  KappaMixture(double k1, double k2, double k3);  // validates
};

/// Complete-odds models Q_{r,a}(x_r, w_a) for every occurring (r != 1_d, a),
/// each a logistic regression of R = r against R = 1_d.
class OddsModelSet {
 public:
  OddsModelSet() = default;
  OddsModelSet(int dim, std::vector<std::string> covariate_names,
               std::vector<std::string> outcome_names, OddsOptions opts);

  static OddsModelSet fit(const MissingDataset& ds, const OddsOptions& opts = {});

  int dim() const { return dim_; }
  const OddsOptions& options() const { return opts_; }

  /// Design row (1, x_r, w [, pairwise products]) for pattern r.
  Eigen::VectorXd features(PatternMask r, const Eigen::VectorXd& x, const Eigen::VectorXd& w) const;
  std::vector<std::string> feature_names(PatternMask r, int outcome_dim) const;

  bool has(PatternMask r, int a) const { return cells_.contains({r.bits(), a}); }
  /// Fitted (or user-supplied) cells as (pattern, a) pairs in ascending order.
  std::vector<std::pair<PatternMask, int>> cells() const;
  const LogisticFit& cell(PatternMask r, int a) const;
  void set_cell(PatternMask r, int a, const Eigen::VectorXd& coefficients);
  /// Patterns r != 1_d with a model for outcome pattern a.
  std::vector<PatternMask> patterns_for(int a) const;

  /// Exponential tilt exp(rho . x_rbar) for pattern r; rho indexed over the
  /// missing coordinates of r in ascending order.
  void set_tilt(PatternMask r, const Eigen::VectorXd& rho);
  void set_uniform_tilt(double rho);
  bool tilted() const;

  void set_kappa(const KappaMixture& k) { kappa_ = k; }
  const std::optional<KappaMixture>& kappa() const { return kappa_; }
  /// Weighted frequency of pattern r among records with outcome pattern a.
  double pattern_frequency(PatternMask r, int a) const;
  void set_pattern_frequency(PatternMask r, int a, double freq);

  /// CCMV odds Q_{r,a}(x_r, w) without tilt or kappa. r = 1_d gives 1.
  double ccmv_odds(PatternMask r, int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                   bool warn_on_clip = true) const;
  /// Odds used by the estimators: CCMV odds, kappa-adjusted for R = 00 when a
  /// mixture is set, times the tilt. Tilts need the missing coordinates of x.
  double odds(PatternMask r, int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
              bool warn_on_clip = true) const;
  /// Sum over all r of the odds, i.e. 1 / P(R = 1_d | x, w, a).
  /// Quadrature over outcomes passes warn_on_clip = false: clipping far in
  /// the tail is expected there.
  double odds_sum(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                  bool warn_on_clip = true) const;

 private:
  int dim_ = 0;
  std::vector<std::string> cov_names_, out_names_;
  OddsOptions opts_{};
  std::map<std::pair<std::uint32_t, int>, LogisticFit> cells_;
  std::map<std::uint32_t, Eigen::VectorXd> tilt_;
  std::map<std::pair<std::uint32_t, int>, double> freq_;
  std::optional<KappaMixture> kappa_;
};

/// Odds of target pattern for a complete record (tilt applied).
double eval_odds(const OddsModelSet& models, const ObservedRecord& rec, PatternMask target);

/// lambda_i = sum_r Q_{r,A_i} for complete records and 0 otherwise.
std::vector<double> ipw_weights(const OddsModelSet& models, const MissingDataset& ds);

/// Odds P(R=00|x,v)/P(R=11|x,v) under the kappa-mixture restriction (d = 2).
double kappa_odds_00(const OddsModelSet& models, const ObservedRecord& rec, const KappaMixture& k);
double kappa_odds_00(const OddsModelSet& models, int a, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& w, const KappaMixture& k);

/// CSV with columns pattern,outcome_pattern,coefficient,value.
void export_odds_coefficients(std::ostream& out, const OddsModelSet& models);
/// Replaces the coefficients of `models` with those read from CSV.
void import_odds_coefficients(std::istream& in, OddsModelSet& models);

}  // namespace mstage
