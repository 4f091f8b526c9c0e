#include "mstage/response.hpp"

#include "mstage/errors.hpp"
#include "mstage/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>

namespace mstage {

namespace {

Eigen::VectorXd subvector(const Eigen::VectorXd& x, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = x(idx[k]);
  return out;
}

std::unique_ptr<MvNormal> ml_gaussian(const std::vector<Eigen::VectorXd>& xs,
                                      const std::vector<double>& wts) {
  const Eigen::Index p = xs.front().size();
  double tw = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mean += wts[i] * xs[i];
    tw += wts[i];
  }
  mean /= tw;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::VectorXd c = xs[i] - mean;
    cov += wts[i] * c * c.transpose();
  }
  cov /= tw;
  cov.diagonal().array() += 1e-8;
  return std::make_unique<MvNormal>(mean, cov);
}

Eigen::RowVectorXd design_row(const Eigen::VectorXd& x) {
  Eigen::RowVectorXd row(x.size() + 1);
  row(0) = 1.0;
  row.tail(x.size()) = x.transpose();
  return row;
}

bool is_binary_value(double v) { return v == 0.0 || v == 1.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Mixture nuisances

MixtureNuisance::MixtureNuisance(const MissingDataset& ds) : dim_(ds.dim()) {
  if (ds.schema().kind != SchemaKind::treatment)
    throw ConfigurationError("mixture nuisances need a binary-treatment dataset");
  for (const auto& rec : ds.records())
    if (!is_binary_value(rec.w(0)))
      throw ConfigurationError("mixture nuisances need a binary outcome");

  const PatternMask full = PatternMask::full(dim_);
  const double total = ds.total_weight();

  std::map<std::pair<int, int>, std::shared_ptr<MvNormal>> complete;
  for (int a = 0; a <= 1; ++a) {
    for (int y = 0; y <= 1; ++y) {
      std::vector<Eigen::VectorXd> xs;
      std::vector<double> wts;
      for (auto i : ds.cell(full, a)) {
        if (ds[i].w(0) != y) continue;
        xs.push_back(ds[i].x);
        wts.push_back(ds[i].weight);
      }
      if (!xs.empty()) complete[{y, a}] = ml_gaussian(xs, wts);
    }
  }

  for (const auto& [key, idx] : ds.pattern_index()) {
    const PatternMask r(key.first, dim_);
    const int a = key.second;
    const auto obs = r.observed();
    for (int y = 0; y <= 1; ++y) {
      std::vector<Eigen::VectorXd> xs;
      std::vector<double> wts;
      double mass = 0.0;
      for (auto i : idx) {
        if (ds[i].w(0) != y) continue;
        mass += ds[i].weight;
        xs.push_back(subvector(ds[i].x, obs));
        wts.push_back(ds[i].weight);
      }
      if (mass <= 0.0) continue;
      auto it = complete.find({y, a});
      if (it == complete.end())
        throw DegenerateError("no complete cases with y = " + std::to_string(y) +
                              ", a = " + std::to_string(a));
      auto comp = std::make_shared<Component>();
      comp->r = r;
      comp->y = y;
      comp->a = a;
      comp->mass = mass / total;
      comp->complete = std::make_unique<MvNormal>(it->second->mean(), it->second->cov());
      if (!r.is_full() && !obs.empty()) {
        Eigen::MatrixXd sub(obs.size(), obs.size());
        for (std::size_t p = 0; p < obs.size(); ++p)
          for (std::size_t q = 0; q < obs.size(); ++q)
            sub(p, q) = it->second->cov()(obs[p], obs[q]);
        comp->complete_marg =
            std::make_unique<MvNormal>(subvector(it->second->mean(), obs), sub);
        comp->observed = ml_gaussian(xs, wts);
      }
      comps_.push_back(std::move(comp));
    }
  }
}

namespace {

template <class Comps>
std::vector<double> component_logs(const Comps& comps, const Eigen::VectorXd& x) {
  std::vector<double> logs;
  logs.reserve(comps.size());
  for (const auto& c : comps) {
    double l = std::log(c->mass) + c->complete->log_density(x);
    if (c->observed) {
      const Eigen::VectorXd xr = subvector(x, c->r.observed());
      l += c->observed->log_density(xr) - c->complete_marg->log_density(xr);
    }
    logs.push_back(l);
  }
  return logs;
}

template <class Comps, class Pred>
double log_sum(const Comps& comps, const std::vector<double>& logs, Pred pred) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logs.size(); ++k)
    if (pred(*comps[k])) mx = std::max(mx, logs[k]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t k = 0; k < logs.size(); ++k)
    if (pred(*comps[k])) s += std::exp(logs[k] - mx);
  return mx + std::log(s);
}

double ratio_from_logs(double num, double den) {
  if (!std::isfinite(den)) throw DegenerateError("mixture density vanishes at the evaluation point");
  return std::exp(num - den);
}

}  // namespace

double MixtureNuisance::joint(const Eigen::VectorXd& x, PatternMask r, int y, int a) const {
  return std::exp(log_sum(comps_, component_logs(comps_, x), [&](const Component& c) {
    return c.r == r && c.y == y && c.a == a;
  }));
}

double MixtureNuisance::propensity(const Eigen::VectorXd& x) const {
  return evaluate(x).pi;
}

double MixtureNuisance::regression(int a, const Eigen::VectorXd& x) const {
  if (a != 0 && a != 1) throw MissingModelError("no outcome regression for arm " + std::to_string(a));
  return evaluate(x).m[a];
}

NuisanceValues MixtureNuisance::evaluate(const Eigen::VectorXd& x) const {
  const auto logs = component_logs(comps_, x);
  NuisanceValues v;
  const double all = log_sum(comps_, logs, [](const Component&) { return true; });
  v.pi = ratio_from_logs(log_sum(comps_, logs, [](const Component& c) { return c.a == 1; }), all);
  for (int a = 0; a <= 1; ++a) {
    const double den = log_sum(comps_, logs, [&](const Component& c) { return c.a == a; });
    const double num = log_sum(comps_, logs, [&](const Component& c) { return c.a == a && c.y == 1; });
    v.m[a] = ratio_from_logs(num, den);
  }
  return v;
}

NuisanceValues OutcomeNuisance::evaluate(const Eigen::VectorXd& x) const {
  NuisanceValues v;
  v.pi = propensity(x);
  for (int a = 0; a <= 1; ++a)
    if (has_regression(a)) v.m[a] = regression(a, x);
  return v;
}

// ---------------------------------------------------------------------------
// Regression nuisances

RegressionNuisance::RegressionNuisance(const MissingDataset& ds, const ImputationDraws* draws,
                                       const OddsModelSet* odds) {
  const int d = ds.dim();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> wts, treat, outcome;
  std::vector<int> arm;

  std::vector<double> lambda;
  if (!draws && odds) lambda = ipw_weights(*odds, ds);

  binary_ = true;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    const bool has_y = rec.w.size() > 0;
    if (has_y && !is_binary_value(rec.w(0))) binary_ = false;
    auto push = [&](const Eigen::VectorXd& x, double wt) {
      if (wt == 0.0) return;
      rows.push_back(design_row(x));
      wts.push_back(wt);
      treat.push_back(rec.a);
      outcome.push_back(has_y ? rec.w(0) : 0.0);
      arm.push_back(has_y ? rec.a : -1);
    };
    if (draws) {
      const auto& set = draws->own(i);
      for (Eigen::Index c = 0; c < set.size(); ++c)
        push(set.x.col(c), rec.weight * set.prob(c));
    } else if (rec.mask.is_full()) {
      push(rec.x, rec.weight * (lambda.empty() ? 1.0 : lambda[i]));
    }
  }
  if (rows.empty()) throw DegenerateError("no rows for the nuisance regressions");

  auto assemble = [&](auto keep, Eigen::MatrixXd& X, Eigen::VectorXd& W, Eigen::VectorXd& y,
                      const std::vector<double>& target) {
    std::vector<std::size_t> sel;
    for (std::size_t k = 0; k < rows.size(); ++k)
      if (keep(k)) sel.push_back(k);
    X.resize(static_cast<Eigen::Index>(sel.size()), d + 1);
    W.resize(X.rows());
    y.resize(X.rows());
    for (std::size_t k = 0; k < sel.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      X.row(kk) = rows[sel[k]];
      W(kk) = wts[sel[k]];
      y(kk) = target[sel[k]];
    }
  };

  Eigen::MatrixXd X;
  Eigen::VectorXd W, y;
  assemble([](std::size_t) { return true; }, X, W, y, treat);
  pi_coef_ = fit_logistic(X, y, W).coefficients;

  const bool missing_response = ds.schema().kind == SchemaKind::missing_response;
  for (int a = missing_response ? 1 : 0; a <= 1; ++a) {
    assemble([&](std::size_t k) { return arm[k] == a; }, X, W, y, outcome);
    if (X.rows() == 0) throw DegenerateError("no records in arm " + std::to_string(a));
    m_coef_[a] = binary_ ? fit_logistic(X, y, W).coefficients : fit_least_squares(X, y, W);
  }
}

double RegressionNuisance::propensity(const Eigen::VectorXd& x) const {
  return sigmoid(design_row(x).dot(pi_coef_));
}

double RegressionNuisance::regression(int a, const Eigen::VectorXd& x) const {
  auto it = m_coef_.find(a);
  if (it == m_coef_.end())
    throw MissingModelError("no outcome regression for arm " + std::to_string(a));
  const double eta = design_row(x).dot(it->second);
  return binary_ ? sigmoid(eta) : eta;
}

NuisanceKind parse_nuisance_kind(const std::string& s) {
  if (s == "auto" || s == "automatic") return NuisanceKind::automatic;
  if (s == "mixture") return NuisanceKind::mixture;
  if (s == "regression") return NuisanceKind::regression;
  throw ConfigurationError("unknown nuisance kind '" + s + "'");
}

namespace {

double clip_propensity(double p, double clip) {
  if (p < clip) {
    warn("propensity clipped from below");
    return clip;
  }
  if (p > 1.0 - clip) {
    warn("propensity clipped from above");
    return 1.0 - clip;
  }
  return p;
}

}  // namespace

double NuisanceSet::pi(const Eigen::VectorXd& x) const {
  return clip_propensity(model->propensity(x), clip);
}

NuisanceValues NuisanceSet::values(const Eigen::VectorXd& x) const {
  NuisanceValues v = model->evaluate(x);
  v.pi = clip_propensity(v.pi, clip);
  return v;
}

NuisanceSet fit_nuisances(const MissingDataset& ds, const ImputationModel* imp,
                          const OddsModelSet* odds, int M, std::uint64_t seed, NuisanceKind kind,
                          bool views, int threads) {
  NuisanceSet out;
  if (imp) out.draws = std::make_shared<ImputationDraws>(*imp, ds, M, seed, views, threads);

  if (kind == NuisanceKind::automatic) {
    bool binary_y = ds.schema().kind == SchemaKind::treatment;
    for (const auto& rec : ds.records())
      if (binary_y && !is_binary_value(rec.w(0))) binary_y = false;
    kind = (binary_y && !ds.binary_covariates()) ? NuisanceKind::mixture : NuisanceKind::regression;
  }
  if (kind == NuisanceKind::mixture)
    out.model = std::make_shared<MixtureNuisance>(ds);
  else
    out.model = std::make_shared<RegressionNuisance>(ds, out.draws.get(), odds);
  return out;
}

// ---------------------------------------------------------------------------
// Estimators

std::string MeanMethod::name() const {
  if (multiply_robust) return "mr";
  std::string s = cov == CovariateMethod::ipw ? "ipw-r:" : "ra-r:";
  switch (out) {
    case OutcomeMethod::ipw: return s + "ipw-a";
    case OutcomeMethod::ra: return s + "ra-a";
    case OutcomeMethod::dr: return s + "dr-a";
  }
  return s;
}

MeanMethod parse_mean_method(const std::string& s) {
  MeanMethod m;
  if (s == "mr") {
    m.multiply_robust = true;
    return m;
  }
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigurationError("method must look like 'ra-r:dr-a', got '" + s + "'");
  const std::string c = s.substr(0, colon), o = s.substr(colon + 1);
  if (c == "ipw-r") m.cov = CovariateMethod::ipw;
  else if (c == "ra-r") m.cov = CovariateMethod::ra;
  else throw ConfigurationError("unknown covariate method '" + c + "'");
  if (o == "ipw-a") m.out = OutcomeMethod::ipw;
  else if (o == "ra-a") m.out = OutcomeMethod::ra;
  else if (o == "dr-a") m.out = OutcomeMethod::dr;
  else throw ConfigurationError("unknown outcome method '" + o + "'");
  return m;
}

namespace {

void check_mean_inputs(const MissingDataset& ds, const NuisanceSet& nuis) {
  if (ds.schema().kind == SchemaKind::survival)
    throw ConfigurationError("mean estimation needs a treatment or missing-response dataset");
  if (!nuis.model) throw PreconditionError("nuisance set has no outcome model");
}

/// Estimates for the arms flagged in `want`, sharing one pass over the
/// nuisance evaluations.
std::array<MeanEstimate, 2> estimate_arms(const MissingDataset& ds, const NuisanceSet& nuis,
                                          const OddsModelSet* odds, const MeanMethod& method,
                                          std::array<bool, 2> want) {
  std::array<MeanEstimate, 2> est;
  for (auto& e : est) {
    e.method = method.name();
    e.dim = ds.dim();
  }
  const double total = ds.total_weight();

  if (method.cov == CovariateMethod::ipw) {
    if (!odds) throw ConfigurationError("IPW-R estimators need odds models");
    const PatternMask full = PatternMask::full(ds.dim());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& rec = ds[i];
      if (!rec.mask.is_full()) continue;
      const NuisanceValues v = nuis.values(rec.x);
      std::vector<std::pair<std::uint32_t, double>> odds_r;
      odds_r.emplace_back(full.bits(), 1.0);
      for (const auto& r : odds->patterns_for(rec.a))
        odds_r.emplace_back(r.bits(), odds->odds(r, rec.a, rec.x, rec.w));
      for (int arm = 0; arm <= 1; ++arm) {
        if (!want[arm]) continue;
        const double T = rec.a == arm ? 1.0 : 0.0;
        const double Y = T > 0.0 ? rec.w(0) : 0.0;
        const double ps = arm == 1 ? v.pi : 1.0 - v.pi;
        const double m = v.m[arm];
        double base = 0.0;
        switch (method.out) {
          case OutcomeMethod::ipw: base = T * Y / ps; break;
          case OutcomeMethod::ra: base = m; break;
          case OutcomeMethod::dr: base = T * (Y - m) / ps + m; break;
        }
        for (const auto& [bits, q] : odds_r) est[arm].theta_r[bits] += rec.weight * base * q;
      }
    }
  } else {
    if (!nuis.draws) throw ConfigurationError("RA-R estimators need imputation draws");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& rec = ds[i];
      const auto& set = nuis.draws->own(i);
      double inv_pi[2] = {0.0, 0.0}, m[2] = {0.0, 0.0}, m_over_pi[2] = {0.0, 0.0};
      for (Eigen::Index c = 0; c < set.size(); ++c) {
        const NuisanceValues v = nuis.values(set.x.col(c));
        const double p = set.prob(c);
        for (int arm = 0; arm <= 1; ++arm) {
          const double ps = arm == 1 ? v.pi : 1.0 - v.pi;
          inv_pi[arm] += p / ps;
          m[arm] += p * v.m[arm];
          m_over_pi[arm] += p * v.m[arm] / ps;
        }
      }
      for (int arm = 0; arm <= 1; ++arm) {
        if (!want[arm]) continue;
        const double T = rec.a == arm ? 1.0 : 0.0;
        const double Y = T > 0.0 ? rec.w(0) : 0.0;
        double value = 0.0;
        switch (method.out) {
          case OutcomeMethod::ipw: value = T * Y * inv_pi[arm]; break;
          case OutcomeMethod::ra: value = m[arm]; break;
          case OutcomeMethod::dr: value = T * Y * inv_pi[arm] + m[arm] - T * m_over_pi[arm]; break;
        }
        est[arm].theta_r[rec.mask.bits()] += rec.weight * value;
      }
    }
  }
  for (auto& e : est) {
    for (auto& [_, t] : e.theta_r) {
      t /= total;
      e.theta += t;
    }
  }
  return est;
}

}  // namespace

MeanEstimate estimate_mean(const MissingDataset& ds, const NuisanceSet& nuis,
                           const OddsModelSet* odds, const MeanMethod& method, int arm) {
  if (method.multiply_robust) {
    if (!odds) throw ConfigurationError("the multiply robust estimator needs odds models");
    if (arm != 1) throw ConfigurationError("the multiply robust estimator targets arm 1");
    return estimate_mean_mr(ds, nuis, *odds);
  }
  check_mean_inputs(ds, nuis);
  if (arm != 0 && arm != 1) throw PreconditionError("arm must be 0 or 1");
  if (ds.schema().kind == SchemaKind::missing_response && arm != 1)
    throw ConfigurationError("with a missing response only E[Y] (arm 1) is identified");
  std::array<bool, 2> want{arm == 0, arm == 1};
  return estimate_arms(ds, nuis, odds, method, want)[arm];
}

MeanEstimate estimate_ate(const MissingDataset& ds, const NuisanceSet& nuis,
                          const OddsModelSet* odds, const MeanMethod& method) {
  if (ds.schema().kind != SchemaKind::treatment)
    throw ConfigurationError("the average treatment effect needs a binary-treatment dataset");
  if (method.multiply_robust)
    throw ConfigurationError("the multiply robust estimator is available for missing responses only");
  check_mean_inputs(ds, nuis);
  auto e = estimate_arms(ds, nuis, odds, method, {true, true});
  e[1].theta -= e[0].theta;
  for (const auto& [r, t] : e[0].theta_r) e[1].theta_r[r] -= t;
  return e[1];
}

std::vector<std::map<std::uint32_t, double>> mr_contributions(const MissingDataset& ds,
                                                              const NuisanceSet& nuis,
                                                              const OddsModelSet& odds) {
  if (ds.schema().kind != SchemaKind::missing_response)
    throw ConfigurationError("the multiply robust estimator needs a missing-response dataset");
  if (!nuis.draws) throw ConfigurationError("the multiply robust estimator needs imputation draws");
  const auto& draws = *nuis.draws;

  // Averages of m1, 1/pi and m1/pi over a draw set.
  struct Moments {
    double m = 0.0, inv_pi = 0.0, m_over_pi = 0.0;
  };
  auto moments = [&](const DrawSet& set) {
    Moments mo;
    for (Eigen::Index c = 0; c < set.size(); ++c) {
      const Eigen::VectorXd xc = set.x.col(c);
      const NuisanceValues v = nuis.values(xc);
      const double p = set.prob(c), m1 = v.m[1], pi = v.pi;
      mo.m += p * m1;
      mo.inv_pi += p / pi;
      mo.m_over_pi += p * m1 / pi;
    }
    return mo;
  };

  std::vector<std::map<std::uint32_t, double>> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    auto& q = out[i];
    const bool treated = rec.a == 1;
    const double Y = treated ? rec.w(0) : 0.0;
    if (rec.mask.is_full()) {
      const NuisanceValues v = nuis.values(rec.x);
      const double m1 = v.m[1], pi = v.pi;
      q[rec.mask.bits()] = m1 + (treated ? (Y - m1) / pi : 0.0);
      for (const auto& r : odds.patterns_for(rec.a)) {
        if (!draws.has_view(r)) throw ConfigurationError("draws lack the view for pattern " + r.to_string());
        const double Q = odds.odds(r, rec.a, rec.x, rec.w);
        const Moments mo = moments(draws.view(i, r));
        double v = Q * (m1 - mo.m);
        if (treated) v += Q * (Y / pi - mo.inv_pi * Y - m1 / pi + mo.m_over_pi);
        q[r.bits()] = v;
      }
    } else {
      const Moments mo = moments(draws.own(i));
      q[rec.mask.bits()] = mo.m + (treated ? mo.inv_pi * Y - mo.m_over_pi : 0.0);
    }
  }
  return out;
}

MeanEstimate estimate_mean_mr(const MissingDataset& ds, const NuisanceSet& nuis,
                              const OddsModelSet& odds) {
  const auto contrib = mr_contributions(ds, nuis, odds);
  MeanEstimate est;
  est.method = "mr";
  est.dim = ds.dim();
  const double total = ds.total_weight();
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (const auto& [r, v] : contrib[i]) est.theta_r[r] += ds[i].weight * v / total;
  for (const auto& [_, t] : est.theta_r) est.theta += t;
  return est;
}

EifCheck eif_mean_zero_check(const MissingDataset& ds, const NuisanceSet& nuis,
                             const OddsModelSet& odds, double theta) {
  const auto contrib = mr_contributions(ds, nuis, odds);
  EifCheck chk;
  double sw = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double v = -theta;
    for (const auto& [_, t] : contrib[i]) v += t;
    const double w = ds[i].weight;
    sw += w;
    s1 += w * v;
    s2 += w * v * v;
  }
  chk.n = sw;
  chk.mean = s1 / sw;
  chk.sd = std::sqrt(std::max(0.0, s2 / sw - chk.mean * chk.mean));
  return chk;
}

void write_mean_estimate(std::ostream& out, const MeanEstimate& est, bool header) {
  if (header) out << "component,estimate\n";
  out << "theta," << format_double(est.theta) << '\n';
  for (const auto& [r, t] : est.theta_r)
    out << "theta_" << PatternMask(r, est.dim).to_string() << ',' << format_double(t) << '\n';
}

}  // namespace mstage
