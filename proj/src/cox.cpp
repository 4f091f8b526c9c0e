#include "mstage/cox.hpp"

#include "mstage/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace mstage {

std::string cox_method_name(CoxMethod m) {
  switch (m) {
    case CoxMethod::complete_case: return "complete-case";
    case CoxMethod::ipw: return "ipw";
    case CoxMethod::stacked_mi: return "stacked-mi";
    case CoxMethod::multiply_robust: return "multiply-robust";
  }
  return "?";
}

void CoxRows::add(double time, int status, const Eigen::Ref<const Eigen::VectorXd>& x,
                  double weight) {
  if (x.size() != dim_) throw PreconditionError("Cox row has wrong covariate dimension");
  if (!std::isfinite(time) || !x.allFinite()) throw DomainError("Cox row has non-finite values");
  time_.push_back(time);
  status_.push_back(status);
  weight_.push_back(weight);
  xs_.insert(xs_.end(), x.data(), x.data() + x.size());
  finalized_ = false;
}

void CoxRows::finalize() {
  if (finalized_) return;
  order_.resize(time_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(),
                   [this](std::size_t a, std::size_t b) { return time_[a] > time_[b]; });
  group_end_.clear();
  for (std::size_t k = 0; k < order_.size(); ++k)
    if (k + 1 == order_.size() || time_[order_[k + 1]] != time_[order_[k]]) group_end_.push_back(k + 1);
  finalized_ = true;
}

template <bool WithJacobian>
void CoxRows::evaluate(const Eigen::VectorXd& beta, Eigen::VectorXd& u, Eigen::MatrixXd* jac) const {
  const int d = dim_;
  const std::size_t n = time_.size();
  std::vector<double> eta(n);
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    eta[i] = Eigen::Map<const Eigen::VectorXd>(&xs_[i * static_cast<std::size_t>(d)], d).dot(beta);
    if (weight_[i] != 0.0) shift = std::max(shift, eta[i]);
  }
  if (!std::isfinite(shift)) shift = 0.0;

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2;
  if constexpr (WithJacobian) {
    s2 = Eigen::MatrixXd::Zero(d, d);
    jac->setZero(d, d);
  }
  u.setZero(d);
  std::size_t start = 0;
  for (std::size_t end : group_end_) {
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t i = order_[k];
      if (weight_[i] == 0.0) continue;
      const Eigen::Map<const Eigen::VectorXd> x(&xs_[i * static_cast<std::size_t>(d)], d);
      const double e = weight_[i] * std::exp(eta[i] - shift);
      s0 += e;
      s1.noalias() += e * x;
      if constexpr (WithJacobian) s2.noalias() += e * x * x.transpose();
    }
    bool have_mean = false;
    Eigen::VectorXd mean;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t i = order_[k];
      if (status_[i] == 0 || weight_[i] == 0.0) continue;
      if (!have_mean) {
        if (!(s0 > 0.0) || !std::isfinite(s0))
          throw DegenerateError("empty or non-positive risk set at an event time");
        mean = s1 / s0;
        have_mean = true;
      }
      const Eigen::Map<const Eigen::VectorXd> x(&xs_[i * static_cast<std::size_t>(d)], d);
      u.noalias() += weight_[i] * (x - mean);
      if constexpr (WithJacobian)
        jac->noalias() -= weight_[i] * (s2 / s0 - mean * mean.transpose());
    }
    start = end;
  }
  u /= norm_;
  if constexpr (WithJacobian) *jac /= norm_;
}

Eigen::VectorXd CoxRows::score(const Eigen::VectorXd& beta) const {
  if (!finalized_) throw PreconditionError("CoxRows::finalize must be called before evaluation");
  Eigen::VectorXd u;
  evaluate<false>(beta, u, nullptr);
  return u;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> CoxRows::score_jacobian(const Eigen::VectorXd& beta) const {
  if (!finalized_) throw PreconditionError("CoxRows::finalize must be called before evaluation");
  Eigen::VectorXd u;
  Eigen::MatrixXd j;
  evaluate<true>(beta, u, &j);
  return {u, j};
}

Eigen::VectorXd cox_score(const Eigen::VectorXd& beta, const Eigen::VectorXd& times,
                          const Eigen::VectorXi& status, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& weights) {
  const Eigen::Index n = X.rows();
  if (X.cols() < 1) throw PreconditionError("cox_score needs at least one covariate");
  if (times.size() != n || status.size() != n || weights.size() != n || beta.size() != X.cols())
    throw PreconditionError("cox_score: dimension mismatch");
  double event_weight = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights(i) >= 0.0)) throw PreconditionError("cox_score: weights must be nonnegative");
    if (status(i)) event_weight += weights(i);
  }
  const bool any_event = (status.array() != 0).any();
  if (any_event && !(event_weight > 0.0))
    throw PreconditionError("cox_score: all event records have zero weight");
  CoxRows rows(static_cast<int>(X.cols()), static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) rows.add(times(i), status(i), X.row(i).transpose(), weights(i));
  rows.finalize();
  return rows.score(beta);
}

// ---------------------------------------------------------------------------

CoxFit solve_cox(CoxRows& rows, CoxMethod method, const CoxOptions& opts) {
  rows.finalize();
  if (rows.size() == 0) throw DegenerateError("Cox fit has no rows");
  const VectorFunction g = [&rows](const Eigen::VectorXd& b) { return rows.score(b); };
  const JacobianFunction jac = [&rows](const Eigen::VectorXd& b) { return rows.score_jacobian(b).second; };
  const RootSolveResult res = newton_solve(g, jac, Eigen::VectorXd::Zero(rows.dim()), opts.newton);
  CoxFit fit;
  fit.beta = res.solution;
  fit.score_norm = res.residual_norm;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.method = method;
  fit.rows = rows.size();
  if (!fit.converged) warn("Cox solver did not converge (" + cox_method_name(method) + ")");
  return fit;
}

CoxFit fit_cox(const MissingDataset& ds, const CoxOptions& opts) {
  if (!ds.fully_observed()) throw PreconditionError("fit_cox needs fully observed covariates");
  return fit_cox_complete_case(ds, opts);
}

CoxFit fit_cox_complete_case(const MissingDataset& ds, const CoxOptions& opts) {
  double total = 0.0;
  for (const auto& rec : ds.records())
    if (rec.mask.is_full()) total += rec.weight;
  CoxRows rows(ds.dim(), total);
  for (const auto& rec : ds.records())
    if (rec.mask.is_full()) rows.add(rec.w(0), rec.a, rec.x, rec.weight);
  return solve_cox(rows, CoxMethod::complete_case, opts);
}

CoxFit fit_cox_ipw(const MissingDataset& ds, const OddsModelSet& odds, const CoxOptions& opts) {
  const std::vector<double> lambda = ipw_weights(odds, ds);
  CoxRows rows(ds.dim(), ds.total_weight());
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0, sum = 0.0, event_w = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    if (!rec.mask.is_full()) continue;
    lo = std::min(lo, lambda[i]);
    hi = std::max(hi, lambda[i]);
    sum += lambda[i];
    ++count;
    if (rec.a) event_w += lambda[i] * rec.weight;
    rows.add(rec.w(0), rec.a, rec.x, rec.weight * lambda[i]);
  }
  if (!(event_w > 0.0)) throw DegenerateError("IPW Cox: no weighted events among complete cases");
  CoxFit fit = solve_cox(rows, CoxMethod::ipw, opts);
  fit.weight_min = lo;
  fit.weight_max = hi;
  fit.weight_mean = sum / static_cast<double>(count);
  return fit;
}

CoxFit fit_cox_mi(const MissingDataset& ds, const ImputationDraws& draws, const CoxOptions& opts) {
  CoxRows rows(ds.dim(), ds.total_weight());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    const auto& set = draws.own(i);
    for (Eigen::Index c = 0; c < set.size(); ++c)
      rows.add(rec.w(0), rec.a, set.x.col(c), rec.weight * set.prob(c));
  }
  CoxFit fit = solve_cox(rows, CoxMethod::stacked_mi, opts);
  fit.M = draws.M();
  return fit;
}

CoxFit fit_cox_mi(const MissingDataset& ds, const ImputationModel& imp, int M, std::uint64_t seed,
                  const CoxOptions& opts) {
  if (M < 1) throw PreconditionError("stacked MI needs M >= 1");
  ImputationDraws draws(imp, ds, M, seed, false, opts.threads);
  return fit_cox_mi(ds, draws, opts);
}

CoxFit fit_cox_stacked(const StackedDataset& st, const CoxOptions& opts) {
  if (st.rows.empty() || st.M < 1) throw PreconditionError("empty stacked dataset");
  const int d = static_cast<int>(st.rows.front().x.size());
  double total = 0.0;
  for (const auto& r : st.rows) total += r.weight;
  CoxRows rows(d, total / st.M);
  for (const auto& r : st.rows) rows.add(r.w(0), r.a, r.x, r.weight / st.M);
  CoxFit fit = solve_cox(rows, CoxMethod::stacked_mi, opts);
  fit.M = st.M;
  return fit;
}

CoxRows mr_rows(const MissingDataset& ds, const OddsModelSet& odds, const ImputationDraws& draws) {
  CoxRows rows(ds.dim(), ds.total_weight());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    const double y = rec.w(0);
    if (rec.mask.is_full()) {
      const auto pats = odds.patterns_for(rec.a);
      std::vector<double> q(pats.size());
      double lambda = 1.0;
      for (std::size_t k = 0; k < pats.size(); ++k) {
        q[k] = odds.odds(pats[k], rec.a, rec.x, rec.w);
        lambda += q[k];
      }
      rows.add(y, rec.a, rec.x, rec.weight * lambda);
      for (std::size_t k = 0; k < pats.size(); ++k) {
        const auto& set = draws.view(i, pats[k]);
        for (Eigen::Index c = 0; c < set.size(); ++c)
          rows.add(y, rec.a, set.x.col(c), -rec.weight * q[k] * set.prob(c));
      }
    } else {
      const auto& set = draws.own(i);
      for (Eigen::Index c = 0; c < set.size(); ++c)
        rows.add(y, rec.a, set.x.col(c), rec.weight * set.prob(c));
    }
  }
  return rows;
}

CoxFit fit_cox_mr(const MissingDataset& ds, const OddsModelSet& odds, const ImputationDraws& draws,
                  const CoxOptions& opts) {
  CoxRows rows = mr_rows(ds, odds, draws);
  CoxFit fit = solve_cox(rows, CoxMethod::multiply_robust, opts);
  fit.M = draws.M();
  return fit;
}

CoxFit fit_cox_mr(const MissingDataset& ds, const OddsModelSet& odds, const ImputationModel& imp,
                  int M, std::uint64_t seed, const CoxOptions& opts) {
  ImputationDraws draws(imp, ds, M, seed, true, opts.threads);
  return fit_cox_mr(ds, odds, draws, opts);
}

void write_cox_estimates(std::ostream& out, const CoxFit& fit, const std::vector<std::string>& names) {
  out << "coefficient,estimate\n";
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    const std::string name = static_cast<std::size_t>(j) < names.size()
                                 ? names[static_cast<std::size_t>(j)]
                                 : "beta" + std::to_string(j + 1);
    out << name << ',' << format_double(fit.beta(j)) << '\n';
  }
}

void write_cox_diagnostics(std::ostream& out, const CoxFit& fit) {
  out << "key,value\n";
  out << "method," << cox_method_name(fit.method) << '\n';
  out << "converged," << (fit.converged ? 1 : 0) << '\n';
  out << "iterations," << fit.iterations << '\n';
  out << "score_norm," << format_double(fit.score_norm) << '\n';
  out << "rows," << fit.rows << '\n';
  out << "M," << fit.M << '\n';
  if (fit.method == CoxMethod::ipw) {
    out << "weight_min," << format_double(fit.weight_min) << '\n';
    out << "weight_max," << format_double(fit.weight_max) << '\n';
    out << "weight_mean," << format_double(fit.weight_mean) << '\n';
  }
}

}  // namespace mstage
