#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/imputation.hpp"
#include "mstage/odds.hpp"

#include <array>
#include <iosfwd>
#include <map>
#include <string>

namespace mstage {

/// Plain key = value configuration. Blank lines and lines starting with '#'
/// are ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(std::istream& in);
KeyValues load_key_values(const std::string& path);

// ---------------------------------------------------------------------------
// Survival simulation with two correlated binary covariates

struct CoxSimSpec {
  double p1 = 0.5, p2 = 0.3, corr = 0.3;
  Eigen::Vector2d beta{-0.5, 2.0};
  double nu1 = 1.0;  // baseline event hazard
  double nu2 = 2.0;  // censoring hazard
  /// Log-odds of R = 01 (x2 observed) against 11: (intercept, x2, y, delta).
  Eigen::Vector4d odds01{0.0, -0.5, 0.75, 0.5};
  /// Log-odds of R = 10 (x1 observed) against 11: (intercept, x1, y, delta).
  Eigen::Vector4d odds10{-1.0, 0.5, 1.0, 1.0};

  /// P(X1 = i, X2 = j) indexed by bits i + 2j; throws ConfigurationError when
  /// some cell leaves [0, 1].
  std::array<double, 4> joint() const;
  void validate() const;
  static CoxSimSpec from_key_values(const KeyValues& kv);
  void write(std::ostream& out) const;
};

MissingDataset gen_cox(const CoxSimSpec& spec, std::size_t n, std::uint64_t seed,
                       bool apply_masks = true);

/// EM fit of the exponential survival model plus the log-ratio coefficients.
struct TransformedMleFit {
  std::array<double, 4> gamma{};  // hazards for x = 00, 10, 01, 11 (x1 is the low bit)
  double nu2 = 0.0;
  Eigen::Vector2d beta = Eigen::Vector2d::Zero();
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik;
};

/// beta1 = (log g2 - log g1 + log g4 - log g3) / 2, beta2 = (log g3 - log g1 + log g4 - log g2) / 2.
Eigen::Vector2d beta_from_gamma(const std::array<double, 4>& gamma);

TransformedMleFit fit_transformed_mle(const MissingDataset& ds, const OddsModelSet& odds,
                                      const SurvivalEmOptions& opts = {});

// ---------------------------------------------------------------------------
// Binary treatment with Gaussian covariates given (R, Y, A)

struct BinaryTreatSimSpec {
  struct Component {
    double prob = 0.0;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  };
  /// Keyed by (pattern bits, y, a).
  std::map<std::tuple<std::uint32_t, int, int>, Component> cells;

  static BinaryTreatSimSpec standard();
  static BinaryTreatSimSpec from_key_values(const KeyValues& kv);
  void validate() const;
  void write(std::ostream& out) const;

  /// Largest discrepancy between the conditional law of the missing
  /// coordinate given the observed one in each incomplete cell and in the
  /// complete cell with the same (y, a). Zero when CCMV holds.
  double ccmv_gap() const;

  /// Exact p(x) P(A = 1 | x) and m_a(x) under these settings.
  double density(const Eigen::Vector2d& x) const;
  double propensity(const Eigen::Vector2d& x) const;
  double regression(int a, const Eigen::Vector2d& x) const;
};

MissingDataset gen_binary_treat(const BinaryTreatSimSpec& spec, std::size_t n, std::uint64_t seed,
                                bool apply_masks = true);

/// E[m_1(X) - m_0(X)] averaged over `draws` draws of X from these settings.
double true_ate_mc(const BinaryTreatSimSpec& spec, std::size_t draws, std::uint64_t seed,
                   int threads = 1);

}  // namespace mstage
