#include "mstage/imputation.hpp"

#include "mstage/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace mstage {

ImputationFamily parse_family(const std::string& name) {
  if (name == "discrete") return ImputationFamily::discrete;
  if (name == "gaussian") return ImputationFamily::gaussian;
  if (name == "cox-em" || name == "cox_em") return ImputationFamily::cox_em;
  throw ConfigurationError("unknown imputation family '" + name +
                           "' (valid: discrete, gaussian, cox-em)");
}

std::string family_name(ImputationFamily f) {
  switch (f) {
    case ImputationFamily::discrete: return "discrete";
    case ImputationFamily::gaussian: return "gaussian";
    case ImputationFamily::cox_em: return "cox-em";
  }
  return "?";
}

double tilt_binary(double p, double zeta) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("tilt_binary: p must lie in [0, 1]");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw PreconditionError("tilt_binary: zeta must lie in [0, 1]");
  if (zeta == 0.5) return p;
  const double den = p + zeta - 2.0 * p * zeta;
  if (den == 0.0) return p;  // (0,0) and (1,1): limit along zeta
  return p * (1.0 - zeta) / den;
}

std::pair<double, double> tilt_gaussian(double mu, double s2, double xi) {
  if (!(s2 > 0.0)) throw PreconditionError("tilt_gaussian: variance must be positive");
  if (!(xi >= 0.0)) throw PreconditionError("tilt_gaussian: xi must be nonnegative");
  const double k = 2.0 * s2 * xi + 1.0;
  return {mu / k, s2 / k};
}

// ---------------------------------------------------------------------------

std::vector<std::pair<Eigen::VectorXd, double>> ImputationModel::support(PatternMask, int,
                                                                         const Eigen::VectorXd&,
                                                                         const Eigen::VectorXd&) const {
  throw ConfigurationError("exact (M = 0) mode needs a finite-support imputation family");
}

void ImputationModel::set_zeta(double zeta) {
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw PreconditionError("zeta must lie in [0, 1]");
  zeta_ = zeta;
}

void ImputationModel::set_xi(double xi) {
  if (!(xi >= 0.0)) throw PreconditionError("xi must be nonnegative");
  xi_ = xi;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t scatter(std::uint32_t c, const std::vector<int>& coords) {
  std::uint32_t out = 0;
  for (std::size_t k = 0; k < coords.size(); ++k)
    if ((c >> k) & 1U) out |= 1U << coords[k];
  return out;
}

std::uint32_t observed_bits(PatternMask r, const Eigen::VectorXd& x) {
  std::uint32_t bits = 0;
  for (int j : r.observed()) {
    if (x(j) == 1.0)
      bits |= 1U << j;
    else if (x(j) != 0.0)
      throw PreconditionError("binary imputation needs 0/1 covariates");
  }
  return bits;
}

}  // namespace

void BinaryJointImputation::set_xi(double xi) {
  if (xi != 0.0) throw ConfigurationError("xi tilt needs continuous (gaussian) imputation");
  ImputationModel::set_xi(xi);
}

std::vector<double> BinaryJointImputation::completion_weights(PatternMask r, int a,
                                                              const Eigen::VectorXd& w,
                                                              std::uint32_t obs_bits) const {
  const auto miss = r.missing();
  std::vector<double> wt(std::size_t{1} << miss.size());
  for (std::uint32_t c = 0; c < wt.size(); ++c) wt[c] = joint_weight(a, w, obs_bits | scatter(c, miss));
  return wt;
}

double BinaryJointImputation::conditional_prob(int a, const Eigen::VectorXd& w,
                                               std::uint32_t fixed_mask, std::uint32_t xbits,
                                               int j) const {
  double num = 0.0, den = 0.0;
  const std::uint32_t full = PatternMask::full_bits(dim_);
  for (std::uint32_t x = 0; x <= full; ++x) {
    if ((x & fixed_mask) != (xbits & fixed_mask)) continue;
    const double v = joint_weight(a, w, x);
    den += v;
    if ((x >> j) & 1U) num += v;
  }
  if (!(den > 0.0)) throw IdentificationError("conditioning cell has zero complete-case mass");
  return num / den;
}

namespace {

// P(next missing coordinate = 1 | first t coordinates fixed to `prefix`).
double chain_prob(const std::vector<double>& wt, std::size_t t, std::uint32_t prefix) {
  const std::uint32_t low = (1U << t) - 1U;
  double num = 0.0, den = 0.0;
  for (std::uint32_t c = 0; c < wt.size(); ++c) {
    if ((c & low) != prefix) continue;
    den += wt[c];
    if ((c >> t) & 1U) num += wt[c];
  }
  if (!(den > 0.0)) throw IdentificationError("conditioning cell has zero complete-case mass");
  return num / den;
}

}  // namespace

void BinaryJointImputation::draw(PatternMask r, int a, const Eigen::VectorXd& w, Eigen::VectorXd& x,
                                 Rng& rng) const {
  const auto miss = r.missing();
  if (miss.empty()) return;
  const auto wt = completion_weights(r, a, w, observed_bits(r, x));
  std::uint32_t prefix = 0;
  for (std::size_t t = 0; t < miss.size(); ++t) {
    const double p = tilt_binary(chain_prob(wt, t, prefix), zeta_);
    const bool one = rng.uniform() < p;
    if (one) prefix |= 1U << t;
    x(miss[t]) = one ? 1.0 : 0.0;
  }
}

std::vector<std::pair<Eigen::VectorXd, double>> BinaryJointImputation::support(
    PatternMask r, int a, const Eigen::VectorXd& w, const Eigen::VectorXd& x) const {
  const auto miss = r.missing();
  std::vector<std::pair<Eigen::VectorXd, double>> out;
  if (miss.empty()) {
    out.emplace_back(x, 1.0);
    return out;
  }
  const auto wt = completion_weights(r, a, w, observed_bits(r, x));
  for (std::uint32_t c = 0; c < wt.size(); ++c) {
    double prob = 1.0;
    for (std::size_t t = 0; t < miss.size() && prob > 0.0; ++t) {
      const double p = tilt_binary(chain_prob(wt, t, c & ((1U << t) - 1U)), zeta_);
      prob *= ((c >> t) & 1U) ? p : 1.0 - p;
    }
    if (prob <= 0.0) continue;
    Eigen::VectorXd xc = x;
    for (std::size_t t = 0; t < miss.size(); ++t) xc(miss[t]) = ((c >> t) & 1U) ? 1.0 : 0.0;
    out.emplace_back(std::move(xc), prob);
  }
  return out;
}

Eigen::VectorXd BinaryJointImputation::conditional_mean(PatternMask r, int a,
                                                        const Eigen::VectorXd& w,
                                                        const Eigen::VectorXd& x) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(x.size());
  for (const auto& [xc, p] : support(r, a, w, x)) m += p * xc;
  return m;
}

// ---------------------------------------------------------------------------

namespace {

bool integer_outcomes(const MissingDataset& ds) {
  for (const auto& rec : ds.records())
    for (Eigen::Index k = 0; k < rec.w.size(); ++k)
      if (rec.w(k) != std::floor(rec.w(k))) return false;
  return true;
}

std::vector<double> key_of(const Eigen::VectorXd& w) { return {w.data(), w.data() + w.size()}; }

std::uint32_t full_bits_of(const Eigen::VectorXd& x) {
  std::uint32_t bits = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (x(j) == 1.0) bits |= 1U << j;
  return bits;
}

}  // namespace

DiscreteImputation::DiscreteImputation(const MissingDataset& ds) : BinaryJointImputation(ds.dim()) {
  if (dim_ > 16) throw ConfigurationError("discrete imputation supports at most 16 covariates");
  if (!ds.binary_covariates())
    throw ConfigurationError("discrete imputation needs binary (0/1) covariates");
  if (!integer_outcomes(ds))
    throw ConfigurationError(
        "discrete imputation needs discrete outcomes; use the gaussian or cox-em family");
  const std::size_t cells = std::size_t{1} << dim_;
  for (const auto& rec : ds.records()) {
    if (!rec.mask.is_full()) continue;
    auto& c = counts_[{rec.a, key_of(rec.w)}];
    if (c.empty()) c.assign(cells, 0.0);
    auto& p = pooled_[rec.a];
    if (p.empty()) p.assign(cells, 0.0);
    const auto bits = full_bits_of(rec.x);
    c[bits] += rec.weight;
    p[bits] += rec.weight;
  }
  for (int a : ds.outcome_patterns())
    if (!pooled_.contains(a))
      throw IdentificationError("no complete cases for outcome pattern a=" + std::to_string(a));
}

const std::vector<double>* DiscreteImputation::cell_counts(int a, const Eigen::VectorXd& w) const {
  auto it = counts_.find({a, key_of(w)});
  if (it != counts_.end()) {
    double s = 0.0;
    for (double v : it->second) s += v;
    if (s > 0.0) return &it->second;
  }
  auto p = pooled_.find(a);
  if (p == pooled_.end())
    throw IdentificationError("no complete cases for outcome pattern a=" + std::to_string(a));
  warn("discrete imputation: empty outcome cell, pooling over outcomes");
  return &p->second;
}

double DiscreteImputation::joint_weight(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const {
  return (*cell_counts(a, w))[xbits];
}

double DiscreteImputation::probability(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const {
  const auto& c = *cell_counts(a, w);
  double s = 0.0;
  for (double v : c) s += v;
  return c[xbits] / s;
}

std::vector<double> DiscreteImputation::completion_weights(PatternMask r, int a,
                                                           const Eigen::VectorXd& w,
                                                           std::uint32_t obs_bits) const {
  const auto& counts = *cell_counts(a, w);
  const auto miss = r.missing();
  std::vector<double> wt(std::size_t{1} << miss.size(), 0.0);
  double total = 0.0;
  for (std::uint32_t c = 0; c < wt.size(); ++c) {
    wt[c] = counts[obs_bits | scatter(c, miss)];
    total += wt[c];
  }
  if (total > 0.0) return wt;
  warn("discrete imputation: empty conditioning cell, using the marginal over observed covariates");
  const auto obs = r.observed();
  for (std::uint32_t c = 0; c < wt.size(); ++c)
    for (std::uint32_t o = 0; o < (1U << obs.size()); ++o)
      wt[c] += counts[scatter(o, obs) | scatter(c, miss)];
  return wt;
}

// ---------------------------------------------------------------------------

GaussianImputation::GaussianImputation(const MissingDataset& ds) : dim_(ds.dim()) {
  const int d = dim_;
  std::map<std::pair<int, std::vector<double>>, std::vector<std::size_t>> strata;
  std::set<std::pair<int, std::vector<double>>> occurring;
  std::map<int, std::vector<std::size_t>> by_a;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    occurring.insert({rec.a, key_of(rec.w)});
    if (!rec.mask.is_full()) continue;
    strata[{rec.a, key_of(rec.w)}].push_back(i);
    by_a[rec.a].push_back(i);
  }
  for (int a : ds.outcome_patterns())
    if (by_a[a].size() < static_cast<std::size_t>(d + 2))
      throw IdentificationError("gaussian imputation needs at least d+2 complete cases for a=" +
                                std::to_string(a));

  stratified_ = integer_outcomes(ds);
  for (const auto& key : occurring) {
    auto it = strata.find(key);
    if (it == strata.end() || it->second.size() < static_cast<std::size_t>(d + 2)) {
      stratified_ = false;
      break;
    }
  }

  auto fit_cell = [&](const std::vector<std::size_t>& idx, int q) {
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Z(n, 1 + q), X(n, d);
    Eigen::VectorXd wt(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& rec = ds[idx[static_cast<std::size_t>(k)]];
      Z(k, 0) = 1.0;
      for (int m = 0; m < q; ++m) Z(k, 1 + m) = rec.w(m);
      X.row(k) = rec.x.transpose();
      wt(k) = rec.weight;
    }
    Cell c;
    c.coef.resize(d, 1 + q);
    for (int j = 0; j < d; ++j) c.coef.row(j) = fit_least_squares(Z, X.col(j), wt).transpose();
    const Eigen::MatrixXd resid = X - Z * c.coef.transpose();
    c.cov = resid.transpose() * wt.asDiagonal() * resid / wt.sum();
    Eigen::LLT<Eigen::MatrixXd> llt(c.cov);
    if (llt.info() != Eigen::Success) {
      c.cov.diagonal().array() += 1e-8;
      jittered_ = true;
      warn("gaussian imputation: singular covariance, jitter 1e-8 added");
    }
    return c;
  };

  if (stratified_) {
    for (const auto& [key, idx] : strata) cells_[key] = fit_cell(idx, 0);
  } else {
    for (const auto& [a, idx] : by_a) {
      const int q = ds.schema().outcome_dim(a);
      cells_[{a, {}}] = fit_cell(idx, q);
    }
  }
}

const GaussianImputation::Cell& GaussianImputation::cell(int a, const Eigen::VectorXd& w) const {
  auto it = cells_.find({a, stratified_ ? key_of(w) : std::vector<double>{}});
  if (it == cells_.end())
    throw IdentificationError("gaussian imputation has no complete cases for this (w, a) stratum");
  return it->second;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> GaussianImputation::parameters(
    int a, const Eigen::VectorXd& w) const {
  const Cell& c = cell(a, w);
  Eigen::VectorXd z(c.coef.cols());
  z(0) = 1.0;
  if (!stratified_)
    for (Eigen::Index m = 1; m < z.size(); ++m) z(m) = w(m - 1);
  return {c.coef * z, c.cov};
}

void GaussianImputation::set_parameters(int a, const Eigen::VectorXd& w,
                                        const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  if (!stratified_) throw PreconditionError("set_parameters needs a stratified model");
  Cell& c = cells_.at({a, key_of(w)});
  c.coef = mean;
  c.cov = cov;
}

std::pair<double, double> GaussianImputation::conditional(const Eigen::VectorXd& mean,
                                                          const Eigen::MatrixXd& cov,
                                                          const std::vector<int>& known,
                                                          const Eigen::VectorXd& x, int j) const {
  if (known.empty()) return {mean(j), cov(j, j)};
  const Eigen::Index k = static_cast<Eigen::Index>(known.size());
  Eigen::MatrixXd sss(k, k);
  Eigen::VectorXd sjs(k), dx(k);
  for (Eigen::Index u = 0; u < k; ++u) {
    sjs(u) = cov(j, known[static_cast<std::size_t>(u)]);
    dx(u) = x(known[static_cast<std::size_t>(u)]) - mean(known[static_cast<std::size_t>(u)]);
    for (Eigen::Index v = 0; v < k; ++v)
      sss(u, v) = cov(known[static_cast<std::size_t>(u)], known[static_cast<std::size_t>(v)]);
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(sss);
  const Eigen::VectorXd coef = ldlt.solve(sjs);
  const double mu = mean(j) + coef.dot(dx);
  const double var = std::max(cov(j, j) - coef.dot(sjs), 1e-300);
  return {mu, var};
}

void GaussianImputation::draw(PatternMask r, int a, const Eigen::VectorXd& w, Eigen::VectorXd& x,
                              Rng& rng) const {
  const auto miss = r.missing();
  if (miss.empty()) return;
  const auto [mean, cov] = parameters(a, w);
  auto known = r.observed();
  for (int j : miss) {
    auto [mu, var] = conditional(mean, cov, known, x, j);
    if (xi_ != 0.0) std::tie(mu, var) = tilt_gaussian(mu, var, xi_);
    x(j) = mu + std::sqrt(var) * rng.normal();
    known.push_back(j);
  }
}

Eigen::VectorXd GaussianImputation::conditional_mean(PatternMask r, int a, const Eigen::VectorXd& w,
                                                     const Eigen::VectorXd& x) const {
  Eigen::VectorXd out = x;
  const auto [mean, cov] = parameters(a, w);
  auto known = r.observed();
  for (int j : r.missing()) {
    auto [mu, var] = conditional(mean, cov, known, out, j);
    if (xi_ != 0.0) std::tie(mu, var) = tilt_gaussian(mu, var, xi_);
    out(j) = mu;
    known.push_back(j);
  }
  return out;
}

void GaussianImputation::set_zeta(double zeta) {
  if (zeta != 0.5) throw ConfigurationError("zeta tilt needs binary covariates");
  ImputationModel::set_zeta(zeta);
}

// ---------------------------------------------------------------------------

double complete_propensity(const OddsModelSet& odds, int delta, const Eigen::VectorXd& x, double y,
                           bool warn_on_clip) {
  Eigen::VectorXd w(1);
  w(0) = y;
  return 1.0 / odds.odds_sum(delta, x, w, warn_on_clip);
}

double survival_density(const SurvivalEmFit& em, std::uint32_t xbits, double y, int delta) {
  const double g = em.gamma(xbits);
  return (delta ? g : em.nu2) * std::exp(-y * (g + em.nu2));
}

namespace {

// Total of the stored covariate law; differs from 1 by rounding, and the
// trace is evaluated for the normalized law.
long double pi_mass(const Eigen::VectorXd& pi) {
  long double s = 0.0L;
  for (Eigen::Index k = 0; k < pi.size(); ++k) s += pi(k);
  return s;
}

// Extended-precision likelihood term for the EM log-likelihood trace.
long double survival_term(const SurvivalEmFit& em, std::uint32_t xbits, double prop, double y,
                          int delta) {
  const long double g = em.gamma(xbits), nu = em.nu2;
  return static_cast<long double>(em.pi(xbits)) * prop * (delta ? g : nu) *
         std::exp(-static_cast<long double>(y) * (g + nu));
}

Eigen::VectorXd bits_to_x(std::uint32_t bits, int d) {
  Eigen::VectorXd x(d);
  for (int j = 0; j < d; ++j) x(j) = ((bits >> j) & 1U) ? 1.0 : 0.0;
  return x;
}

void check_survival_binary(const MissingDataset& ds, const char* what) {
  if (ds.schema().kind != SchemaKind::survival)
    throw ConfigurationError(std::string(what) + " needs survival data");
  if (!ds.binary_covariates())
    throw ConfigurationError(std::string(what) + " needs binary (0/1) covariates");
  if (ds.dim() > 12) throw ConfigurationError(std::string(what) + " supports at most 12 covariates");
}

}  // namespace

SurvivalEmFit fit_survival_em(const MissingDataset& ds, const OddsModelSet& odds,
                              const SurvivalEmOptions& opts) {
  check_survival_binary(ds, "survival EM");
  const int d = ds.dim();
  const std::size_t cells = std::size_t{1} << d;
  const std::size_t n = ds.size();

  // Consistent completions and their complete-case propensities, fixed
  // across iterations because the odds are held fixed.
  std::vector<std::vector<std::uint32_t>> cons(n);
  std::vector<std::vector<double>> prop(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = ds[i];
    const auto miss = rec.mask.missing();
    const std::uint32_t obs = observed_bits(rec.mask, rec.x);
    for (std::uint32_t c = 0; c < (1U << miss.size()); ++c) {
      const std::uint32_t xb = obs | scatter(c, miss);
      cons[i].push_back(xb);
      prop[i].push_back(rec.mask.is_full() ? 1.0
                                           : complete_propensity(odds, rec.a, bits_to_x(xb, d),
                                                                 rec.w(0)));
    }
  }

  SurvivalEmFit fit;
  fit.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
  fit.pi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
  {
    Eigen::VectorXd ev = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
    Eigen::VectorXd ex = ev;
    double cc = 0.0, cens = 0.0, expo = 0.0, events = 0.0;
    for (const auto& rec : ds.records()) {
      if (!rec.mask.is_full()) continue;
      const auto b = full_bits_of(rec.x);
      fit.pi(b) += rec.weight;
      ev(b) += rec.weight * rec.a;
      ex(b) += rec.weight * rec.w(0);
      cc += rec.weight;
      cens += rec.weight * (1 - rec.a);
      events += rec.weight * rec.a;
      expo += rec.weight * rec.w(0);
    }
    if (!(expo > 0.0)) throw DegenerateError("survival EM: complete cases have no exposure");
    fit.pi /= cc;
    if ((fit.pi.array() == 0.0).any()) fit.pi = 0.5 * fit.pi.array() + 0.5 / static_cast<double>(cells);
    for (std::size_t x = 0; x < cells; ++x) {
      // cells without complete cases start at the pooled event rate
      fit.gamma(x) = ex(x) > 0.0 ? ev(x) / ex(x) : events / expo;
    }
    fit.nu2 = cens / expo;
  }

  double total_w = 0.0, cens_w = 0.0, expo_w = 0.0;
  for (const auto& rec : ds.records()) {
    total_w += rec.weight;
    cens_w += rec.weight * (1 - rec.a);
    expo_w += rec.weight * rec.w(0);
  }

  std::vector<double> u;
  for (fit.iterations = 0; fit.iterations < opts.max_iter;) {
    Eigen::VectorXd pi_new = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells));
    Eigen::VectorXd ev = pi_new, ex = pi_new;
    long double ll = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = ds[i];
      const double y = rec.w(0);
      u.assign(cons[i].size(), 0.0);
      long double L = 0.0L;
      for (std::size_t k = 0; k < cons[i].size(); ++k) {
        const auto xb = cons[i][k];
        const long double term = survival_term(fit, xb, prop[i][k], y, rec.a);
        u[k] = static_cast<double>(term);
        L += term;
      }
      if (!(L > 0.0L)) throw DegenerateError("survival EM: record with zero likelihood");
      ll += rec.weight * std::log(L);
      for (std::size_t k = 0; k < cons[i].size(); ++k) {
        const double wk = rec.weight * u[k] / static_cast<double>(L);
        pi_new(cons[i][k]) += wk;
        ev(cons[i][k]) += wk * rec.a;
        ex(cons[i][k]) += wk * y;
      }
    }
    fit.loglik.push_back(static_cast<double>(ll - total_w * std::log(pi_mass(fit.pi))));
    pi_new /= total_w;
    Eigen::VectorXd gamma_new(static_cast<Eigen::Index>(cells));
    for (std::size_t x = 0; x < cells; ++x) {
      if (!(ex(x) > 0.0)) throw DegenerateError("survival EM: no weighted exposure in a covariate cell");
      gamma_new(x) = ev(x) / ex(x);
    }
    const double nu2_new = cens_w / expo_w;
    const double change = std::max({(pi_new - fit.pi).cwiseAbs().maxCoeff(),
                                    (gamma_new - fit.gamma).cwiseAbs().maxCoeff(),
                                    std::abs(nu2_new - fit.nu2)});
    fit.pi = pi_new;
    fit.gamma = gamma_new;
    fit.nu2 = nu2_new;
    ++fit.iterations;
    if (change < opts.tol) {
      fit.converged = true;
      break;
    }
  }
  // log-likelihood at the returned parameters
  long double ll = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    long double L = 0.0L;
    for (std::size_t k = 0; k < cons[i].size(); ++k)
      L += survival_term(fit, cons[i][k], prop[i][k], ds[i].w(0), ds[i].a);
    ll += ds[i].weight * std::log(L);
  }
  fit.loglik.push_back(static_cast<double>(ll - total_w * std::log(pi_mass(fit.pi))));
  return fit;
}

CoxEmImputation::CoxEmImputation(const MissingDataset& ds, const OddsModelSet& odds,
                                 SurvivalEmFit em)
    : BinaryJointImputation(ds.dim()), odds_(odds), em_(std::move(em)) {
  check_survival_binary(ds, "cox-em imputation");
  const std::size_t cells = std::size_t{1} << dim_;
  p_x11_.assign(cells, 0.0);
  double total = 0.0;
  for (const auto& rec : ds.records()) {
    total += rec.weight;
    if (rec.mask.is_full()) p_x11_[full_bits_of(rec.x)] += rec.weight;
  }
  for (auto& v : p_x11_) v /= total;
  p11_given_x_.assign(cells, 0.0);
  for (std::uint32_t xb = 0; xb < cells; ++xb) {
    const Eigen::VectorXd x = bits_to_x(xb, dim_);
    double s = 0.0;
    for (int delta = 0; delta <= 1; ++delta) {
      s += integrate_1d(
          [&](double y) {
            return complete_propensity(odds_, delta, x, y, false) *
                   survival_density(em_, xb, y, delta);
          },
          0.0, kInfinity, 1e-8);
    }
    p11_given_x_[xb] = s;
  }
}

double CoxEmImputation::joint_weight(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const {
  if (p_x11_[xbits] == 0.0 || !(p11_given_x_[xbits] > 0.0)) return 0.0;
  const Eigen::VectorXd x = bits_to_x(xbits, dim_);
  const double y = w(0);
  return p_x11_[xbits] * complete_propensity(odds_, a, x, y) * survival_density(em_, xbits, y, a) /
         p11_given_x_[xbits];
}

std::unique_ptr<ImputationModel> fit_imputation(const MissingDataset& ds, ImputationFamily family,
                                                const ImputationOptions& opts) {
  switch (family) {
    case ImputationFamily::discrete: return std::make_unique<DiscreteImputation>(ds);
    case ImputationFamily::gaussian: return std::make_unique<GaussianImputation>(ds);
    case ImputationFamily::cox_em: {
      if (!opts.odds) throw MissingModelError("cox-em imputation needs fitted odds models");
      SurvivalEmFit em = fit_survival_em(ds, *opts.odds);
      return std::make_unique<CoxEmImputation>(ds, *opts.odds, std::move(em));
    }
  }
  throw ConfigurationError("unknown imputation family");
}

// ---------------------------------------------------------------------------

DrawSet draw_completions(const ImputationModel& model, PatternMask r, int a,
                         const Eigen::VectorXd& w, const Eigen::VectorXd& x, int M, Rng& rng) {
  DrawSet ds;
  if (M < 0) throw PreconditionError("M must be nonnegative");
  if (M == 0) {
    const auto sup = model.support(r, a, w, x);
    ds.x.resize(x.size(), static_cast<Eigen::Index>(sup.size()));
    ds.prob.resize(static_cast<Eigen::Index>(sup.size()));
    for (std::size_t k = 0; k < sup.size(); ++k) {
      ds.x.col(static_cast<Eigen::Index>(k)) = sup[k].first;
      ds.prob(static_cast<Eigen::Index>(k)) = sup[k].second;
    }
    return ds;
  }
  ds.x.resize(x.size(), M);
  ds.prob = Eigen::VectorXd::Constant(M, 1.0 / M);
  Eigen::VectorXd xc = x;
  for (int j = 0; j < M; ++j) {
    model.draw(r, a, w, xc, rng);
    ds.x.col(j) = xc;
  }
  return ds;
}

ImputationDraws::ImputationDraws(const ImputationModel& model, const MissingDataset& ds, int M,
                                 std::uint64_t seed, bool all_views, int threads)
    : M_(M), dim_(ds.dim()) {
  const std::size_t n = ds.size();
  const std::uint64_t stride = std::uint64_t{1} << dim_;
  own_.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& rec = ds[i];
    if (rec.mask.is_full()) {
      own_[i].x = rec.x;
      own_[i].prob = Eigen::VectorXd::Ones(1);
    } else {
      Rng rng = Rng::substream(seed, i * stride + rec.mask.bits());
      own_[i] = draw_completions(model, rec.mask, rec.a, rec.w, rec.x, M, rng);
    }
  });
  if (!all_views) return;
  for (PatternMask r : ds.patterns()) {
    if (r.is_full()) continue;
    auto& v = views_[r.bits()];
    v.resize(n);
    parallel_for(n, threads, [&](std::size_t i) {
      const auto& rec = ds[i];
      if (!rec.mask.is_full()) return;
      Rng rng = Rng::substream(seed, i * stride + r.bits());
      v[i] = draw_completions(model, r, rec.a, rec.w, rec.x, M, rng);
    });
  }
}

const DrawSet& ImputationDraws::view(std::size_t i, PatternMask r) const {
  auto it = views_.find(r.bits());
  if (it == views_.end()) throw PreconditionError("no draws for pattern view " + r.to_string());
  return it->second[i];
}

std::vector<PatternMask> ImputationDraws::view_patterns() const {
  std::vector<PatternMask> out;
  for (const auto& [b, _] : views_) out.emplace_back(b, dim_);
  return out;
}

StackedDataset stack_draws(const ImputationDraws& draws, const MissingDataset& ds) {
  if (draws.M() < 1) throw PreconditionError("stacking needs M >= 1");
  StackedDataset st;
  st.schema = ds.schema();
  st.M = draws.M();
  st.rows.reserve(static_cast<std::size_t>(st.M) * ds.size());
  for (int j = 0; j < st.M; ++j) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& set = draws.own(i);
      StackedRow row;
      row.source_id = i;
      row.imp_id = j;
      row.x = set.x.col(set.size() == 1 ? 0 : j);
      row.a = ds[i].a;
      row.w = ds[i].w;
      row.weight = ds[i].weight;
      st.rows.push_back(std::move(row));
    }
  }
  return st;
}

StackedDataset impute_stacked(const ImputationModel& model, const MissingDataset& ds, int M,
                              std::uint64_t seed, int threads) {
  if (M < 1) throw PreconditionError("impute_stacked needs M >= 1");
  ImputationDraws draws(model, ds, M, seed, false, threads);
  return stack_draws(draws, ds);
}

void write_stacked_csv(std::ostream& out, const StackedDataset& st) {
  const Schema& s = st.schema;
  out << "source_id,imp_id";
  for (const auto& c : s.covariates) out << ',' << c;
  for (const auto& c : s.outcomes) out << ',' << c;
  out << ',' << s.pattern_column << ",weight\n";
  for (const auto& row : st.rows) {
    out << row.source_id << ',' << row.imp_id;
    for (Eigen::Index j = 0; j < row.x.size(); ++j) out << ',' << format_double(row.x(j));
    const auto& obs = s.outcomes_for(row.a);
    for (std::size_t k = 0; k < s.outcomes.size(); ++k) {
      const auto pos = std::find(obs.begin(), obs.end(), static_cast<int>(k));
      out << ',' << (pos == obs.end() ? std::string("NA") : format_double(row.w(pos - obs.begin())));
    }
    out << ',' << row.a << ',' << format_double(row.weight) << '\n';
  }
}

StackedDataset read_stacked_csv(std::istream& in, const Schema& schema) {
  StackedDataset st;
  st.schema = schema;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("stacked file is empty");
  const std::size_t d = schema.covariates.size();
  const std::size_t q = schema.outcomes.size();
  long row = 0;
  int max_imp = -1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    if (line.back() == '\r') line.pop_back();
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string t;
    while (std::getline(ss, t, ',')) f.push_back(t);
    if (f.size() != 2 + d + q + 2) throw ParseError("wrong number of fields", row);
    StackedRow r;
    r.source_id = static_cast<std::size_t>(parse_double(f[0], row));
    r.imp_id = static_cast<int>(parse_double(f[1], row));
    max_imp = std::max(max_imp, r.imp_id);
    r.x.resize(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) r.x(static_cast<Eigen::Index>(j)) = parse_double(f[2 + j], row);
    r.a = static_cast<int>(parse_double(f[2 + d + q], row));
    const auto& obs = schema.outcomes_for(r.a);
    r.w.resize(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k)
      r.w(static_cast<Eigen::Index>(k)) = parse_double(f[2 + d + static_cast<std::size_t>(obs[k])], row);
    r.weight = parse_double(f[2 + d + q + 1], row);
    st.rows.push_back(std::move(r));
  }
  st.M = max_imp + 1;
  return st;
}

Eigen::VectorXd regression_adjust(const ImputationModel& model, const MissingDataset& ds,
                                  const OdfSpec& f, int M, std::uint64_t seed) {
  ImputationDraws draws(model, ds, M, seed, false);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(f.output_dim);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    const auto& set = draws.own(i);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(f.output_dim);
    for (Eigen::Index c = 0; c < set.size(); ++c)
      m += set.prob(c) * f.evaluate(rec.a, set.x.col(c), rec.w);
    acc += rec.weight * m;
    total += rec.weight;
  }
  return acc / total;
}

}  // namespace mstage
