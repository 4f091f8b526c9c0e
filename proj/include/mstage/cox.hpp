#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/imputation.hpp"
#include "mstage/numerics.hpp"
#include "mstage/odds.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mstage {

enum class CoxMethod { complete_case, ipw, stacked_mi, multiply_robust };

std::string cox_method_name(CoxMethod m);

/// Weighted rows for the Breslow partial-likelihood score. Weights may be
/// negative (the augmented estimating function uses signed rows).
class CoxRows {
 public:
  CoxRows(int dim, double normalizer) : dim_(dim), norm_(normalizer) {}
  void add(double time, int status, const Eigen::Ref<const Eigen::VectorXd>& x, double weight);
  /// Sorts by time (descending) and records tie groups; called lazily.
  void finalize();

  std::size_t size() const { return time_.size(); }
  int dim() const { return dim_; }
  double normalizer() const { return norm_; }

  Eigen::VectorXd score(const Eigen::VectorXd& beta) const;
  /// Score and its Jacobian in one pass.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> score_jacobian(const Eigen::VectorXd& beta) const;

 private:
  template <bool WithJacobian>
  void evaluate(const Eigen::VectorXd& beta, Eigen::VectorXd& u, Eigen::MatrixXd* jac) const;

  int dim_;
  double norm_;
  bool finalized_ = false;
  std::vector<double> time_;
  std::vector<int> status_;
  std::vector<double> weight_;
  std::vector<double> xs_;     // row-major, dim_ per row
  std::vector<std::size_t> order_;
  std::vector<std::size_t> group_end_;
};

/// (1/n) sum_i w_i Delta_i (X_i - s1(Y_i)/s0(Y_i)) with Breslow risk sets.
Eigen::VectorXd cox_score(const Eigen::VectorXd& beta, const Eigen::VectorXd& times,
                          const Eigen::VectorXi& status, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& weights);

struct CoxFit {
  Eigen::VectorXd beta;
  double score_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  CoxMethod method = CoxMethod::complete_case;
  std::size_t rows = 0;
  int M = 0;
  double weight_min = 0.0, weight_max = 0.0, weight_mean = 0.0;  // lambda over complete cases
};

struct CoxOptions {
  NewtonOptions newton{};
  int threads = 1;
};

CoxFit solve_cox(CoxRows& rows, CoxMethod method, const CoxOptions& opts = {});

/// Ordinary weighted Cox fit (all records must be complete).
CoxFit fit_cox(const MissingDataset& ds, const CoxOptions& opts = {});
/// Drops records with any missing covariate.
CoxFit fit_cox_complete_case(const MissingDataset& ds, const CoxOptions& opts = {});
CoxFit fit_cox_ipw(const MissingDataset& ds, const OddsModelSet& odds, const CoxOptions& opts = {});
CoxFit fit_cox_mi(const MissingDataset& ds, const ImputationModel& imp, int M, std::uint64_t seed,
                  const CoxOptions& opts = {});
CoxFit fit_cox_mi(const MissingDataset& ds, const ImputationDraws& draws, const CoxOptions& opts = {});
/// Plain Cox fit on an exported stacked dataset.
CoxFit fit_cox_stacked(const StackedDataset& st, const CoxOptions& opts = {});
CoxFit fit_cox_mr(const MissingDataset& ds, const OddsModelSet& odds, const ImputationModel& imp,
                  int M, std::uint64_t seed, const CoxOptions& opts = {});
CoxFit fit_cox_mr(const MissingDataset& ds, const OddsModelSet& odds, const ImputationDraws& draws,
                  const CoxOptions& opts = {});

/// Rows of the augmented estimating function: complete records at their own
/// covariates with weight 1 + sum_r Q_r, their pattern-r completions with
/// weight -Q_r times the draw probability, and incomplete records at their
/// completions.
CoxRows mr_rows(const MissingDataset& ds, const OddsModelSet& odds, const ImputationDraws& draws);

void write_cox_estimates(std::ostream& out, const CoxFit& fit, const std::vector<std::string>& names);
void write_cox_diagnostics(std::ostream& out, const CoxFit& fit);

}  // namespace mstage
