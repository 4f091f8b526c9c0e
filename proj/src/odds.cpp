#include "mstage/odds.hpp"

#include "mstage/errors.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace mstage {

KappaMixture::KappaMixture(double k1_, double k2_, double k3_) : k1(k1_), k2(k2_), k3(k3_) {
  if (k1 < 0 || k2 < 0 || k3 < 0) throw PreconditionError("kappa weights must be nonnegative");
  if (std::abs(k1 + k2 + k3 - 1.0) > 1e-12) throw PreconditionError("kappa weights must sum to 1");
}

OddsModelSet::OddsModelSet(int dim, std::vector<std::string> covariate_names,
                           std::vector<std::string> outcome_names, OddsOptions opts)
    : dim_(dim), cov_names_(std::move(covariate_names)), out_names_(std::move(outcome_names)),
      opts_(opts) {}

Eigen::VectorXd OddsModelSet::features(PatternMask r, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& w) const {
  std::vector<double> base;
  for (int j : r.observed()) base.push_back(x(j));
  if (!opts_.drop_outcome)
    for (Eigen::Index k = 0; k < w.size(); ++k) base.push_back(w(k));
  const std::size_t m = base.size();
  const std::size_t pairs = opts_.interactions ? m * (m - (m > 0 ? 1 : 0)) / 2 : 0;
  Eigen::VectorXd f(static_cast<Eigen::Index>(1 + m + pairs));
  f(0) = 1.0;
  for (std::size_t k = 0; k < m; ++k) f(static_cast<Eigen::Index>(1 + k)) = base[k];
  if (opts_.interactions) {
    Eigen::Index pos = static_cast<Eigen::Index>(1 + m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) f(pos++) = base[i] * base[j];
  }
  return f;
}

std::vector<std::string> OddsModelSet::feature_names(PatternMask r, int outcome_dim) const {
  std::vector<std::string> base;
  for (int j : r.observed())
    base.push_back(j < static_cast<int>(cov_names_.size()) ? cov_names_[j]
                                                          : "x" + std::to_string(j + 1));
  if (!opts_.drop_outcome)
    for (int k = 0; k < outcome_dim; ++k)
      base.push_back(k < static_cast<int>(out_names_.size()) ? out_names_[k]
                                                             : "w" + std::to_string(k + 1));
  std::vector<std::string> names{"(Intercept)"};
  names.insert(names.end(), base.begin(), base.end());
  if (opts_.interactions)
    for (std::size_t i = 0; i < base.size(); ++i)
      for (std::size_t j = i + 1; j < base.size(); ++j) names.push_back(base[i] + ":" + base[j]);
  return names;
}

OddsModelSet OddsModelSet::fit(const MissingDataset& ds, const OddsOptions& opts) {
  const Schema& s = ds.schema();
  OddsModelSet set(ds.dim(), s.covariates, s.outcomes, opts);
  const PatternMask full = PatternMask::full(ds.dim());

  for (int a : ds.outcome_patterns()) {
    double total = 0.0;
    for (const auto& [key, idx] : ds.pattern_index()) {
      if (key.second != a) continue;
      double wsum = 0.0;
      for (auto i : idx) wsum += ds[i].weight;
      set.freq_[key] = wsum;
      total += wsum;
    }
    for (auto& [key, v] : set.freq_)
      if (key.second == a && total > 0) v /= total;

    const auto& cc = ds.cell(full, a);
    for (PatternMask r : ds.patterns()) {
      if (r.is_full()) continue;
      const auto& rows_r = ds.cell(r, a);
      if (rows_r.empty()) continue;
      if (cc.empty())
        throw IdentificationError("no complete cases for pattern " + r.to_string() +
                                  " with outcome pattern a=" + std::to_string(a));
      const Eigen::Index n = static_cast<Eigen::Index>(rows_r.size() + cc.size());
      const Eigen::Index p = set.features(r, ds[cc.front()].x, ds[cc.front()].w).size();
      Eigen::MatrixXd X(n, p);
      Eigen::VectorXd y(n), wt(n);
      Eigen::Index row = 0;
      for (auto i : rows_r) {
        X.row(row) = set.features(r, ds[i].x, ds[i].w).transpose();
        y(row) = 1.0;
        wt(row++) = ds[i].weight;
      }
      for (auto i : cc) {
        X.row(row) = set.features(r, ds[i].x, ds[i].w).transpose();
        y(row) = 0.0;
        wt(row++) = ds[i].weight;
      }
      LogisticFit f = fit_logistic(X, y, wt, opts.logistic);
      if (f.separated)
        warn("odds model for pattern " + r.to_string() + ", a=" + std::to_string(a) +
             " is separated");
      set.cells_[{r.bits(), a}] = std::move(f);
    }
  }
  return set;
}

std::vector<std::pair<PatternMask, int>> OddsModelSet::cells() const {
  std::vector<std::pair<PatternMask, int>> out;
  for (const auto& [key, _] : cells_) out.emplace_back(PatternMask(key.first, dim_), key.second);
  return out;
}

const LogisticFit& OddsModelSet::cell(PatternMask r, int a) const {
  auto it = cells_.find({r.bits(), a});
  if (it == cells_.end())
    throw MissingModelError("no odds model for pattern " + r.to_string() + ", a=" +
                            std::to_string(a));
  return it->second;
}

void OddsModelSet::set_cell(PatternMask r, int a, const Eigen::VectorXd& coefficients) {
  if (r.is_full()) throw PreconditionError("the complete pattern has no odds model");
  bool ok = false;
  for (int q = 0; q <= static_cast<int>(out_names_.size()); ++q)
    if (static_cast<Eigen::Index>(feature_names(r, q).size()) == coefficients.size()) ok = true;
  if (!ok) throw PreconditionError("coefficient vector length does not match the feature layout");
  LogisticFit f;
  f.coefficients = coefficients;
  f.converged = true;
  cells_[{r.bits(), a}] = std::move(f);
}

std::vector<PatternMask> OddsModelSet::patterns_for(int a) const {
  std::vector<PatternMask> out;
  for (const auto& [key, _] : cells_)
    if (key.second == a) out.emplace_back(key.first, dim_);
  return out;
}

void OddsModelSet::set_tilt(PatternMask r, const Eigen::VectorXd& rho) {
  if (rho.size() != r.dim() - r.count())
    throw PreconditionError("tilt vector length must equal the number of missing coordinates");
  tilt_[r.bits()] = rho;
}

void OddsModelSet::set_uniform_tilt(double rho) {
  tilt_.clear();
  if (rho == 0.0) return;
  const std::uint32_t full = PatternMask::full_bits(dim_);
  for (std::uint32_t b = 0; b < full; ++b) {
    PatternMask r(b, dim_);
    tilt_[b] = Eigen::VectorXd::Constant(dim_ - r.count(), rho);
  }
}

bool OddsModelSet::tilted() const {
  for (const auto& [_, v] : tilt_)
    if (v.size() > 0 && v.cwiseAbs().maxCoeff() != 0.0) return true;
  return false;
}

double OddsModelSet::pattern_frequency(PatternMask r, int a) const {
  auto it = freq_.find({r.bits(), a});
  return it == freq_.end() ? 0.0 : it->second;
}

void OddsModelSet::set_pattern_frequency(PatternMask r, int a, double freq) {
  freq_[{r.bits(), a}] = freq;
}

double OddsModelSet::ccmv_odds(PatternMask r, int a, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& w, bool warn_on_clip) const {
  if (r.is_full()) return 1.0;
  const LogisticFit& f = cell(r, a);
  const double eta = f.coefficients.dot(features(r, x, w));
  if (std::isnan(eta)) throw DomainError("odds evaluated at non-finite features");
  double q = std::exp(eta);
  if (q > opts_.clip) {
    if (warn_on_clip) warn("odds clipped at " + std::to_string(opts_.clip));
    q = opts_.clip;
  }
  return q;
}

double OddsModelSet::odds(PatternMask r, int a, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& w, bool warn_on_clip) const {
  if (r.is_full()) return 1.0;
  double q = (kappa_ && dim_ == 2 && r.bits() == 0U) ? kappa_odds_00(*this, a, x, w, *kappa_)
                                                      : ccmv_odds(r, a, x, w, warn_on_clip);
  auto it = tilt_.find(r.bits());
  if (it != tilt_.end() && it->second.size() > 0) {
    const auto miss = r.missing();
    double s = 0.0;
    for (std::size_t k = 0; k < miss.size(); ++k) {
      const double v = x(miss[k]);
      if (std::isnan(v)) throw PreconditionError("tilted odds need the missing coordinates");
      s += it->second(static_cast<Eigen::Index>(k)) * v;
    }
    q *= std::exp(s);
  }
  return q;
}

double OddsModelSet::odds_sum(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                              bool warn_on_clip) const {
  double s = 1.0;
  for (const auto& [key, _] : cells_)
    if (key.second == a) s += odds(PatternMask(key.first, dim_), a, x, w, warn_on_clip);
  return s;
}

// ---------------------------------------------------------------------------

double eval_odds(const OddsModelSet& models, const ObservedRecord& rec, PatternMask target) {
  if (!rec.mask.is_full()) throw PreconditionError("eval_odds needs a complete-case record");
  return models.odds(target, rec.a, rec.x, rec.w);
}

std::vector<double> ipw_weights(const OddsModelSet& models, const MissingDataset& ds) {
  std::vector<double> lambda(ds.size(), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    if (rec.mask.is_full()) lambda[i] = models.odds_sum(rec.a, rec.x, rec.w);
  }
  return lambda;
}

double kappa_odds_00(const OddsModelSet& models, int a, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& w, const KappaMixture& k) {
  if (models.dim() != 2) throw ConfigurationError("kappa-mixture odds need exactly 2 covariates");
  const PatternMask r00(0U, 2), r10(1U, 2), r01(2U, 2), r11(3U, 2);
  const double q01 = models.ccmv_odds(r01, a, x, w);
  const double q10 = models.ccmv_odds(r10, a, x, w);
  const double f11 = models.pattern_frequency(r11, a);
  if (!(f11 > 0.0)) throw IdentificationError("no complete-case mass for kappa odds");
  const double rho00 = models.has(r00, a) ? models.ccmv_odds(r00, a, x, w)
                                          : models.pattern_frequency(r00, a) / f11;
  const double rho01 = models.pattern_frequency(r01, a) / f11;
  const double rho10 = models.pattern_frequency(r10, a) / f11;

  double total = k.k3 * rho00 / (q10 + q01 + 1.0);
  if (k.k1 > 0.0) {
    if (!(rho01 > 0.0)) throw IdentificationError("pattern 01 absent; kappa1 must be zero");
    total += k.k1 * (rho00 / rho01) / (q10 / q01 + 1.0 / q01 + 1.0);
  }
  if (k.k2 > 0.0) {
    if (!(rho10 > 0.0)) throw IdentificationError("pattern 10 absent; kappa2 must be zero");
    total += k.k2 * (rho00 / rho10) / (q01 / q10 + 1.0 / q10 + 1.0);
  }
  return total * (1.0 + q01 + q10);
}

double kappa_odds_00(const OddsModelSet& models, const ObservedRecord& rec, const KappaMixture& k) {
  if (!rec.mask.is_full()) throw PreconditionError("kappa odds need a complete-case record");
  return kappa_odds_00(models, rec.a, rec.x, rec.w, k);
}

void export_odds_coefficients(std::ostream& out, const OddsModelSet& models) {
  out << "pattern,outcome_pattern,coefficient,value\n";
  for (const auto& [r, a] : models.cells()) {
    const auto& coef = models.cell(r, a).coefficients;
    std::vector<std::string> names;
    for (int q = 0; q <= 8; ++q) {
      names = models.feature_names(r, q);
      if (static_cast<Eigen::Index>(names.size()) == coef.size()) break;
    }
    for (Eigen::Index k = 0; k < coef.size(); ++k)
      out << r.to_string() << ',' << a << ',' << names[static_cast<std::size_t>(k)] << ','
          << format_double(coef(k)) << '\n';
  }
}

void import_odds_coefficients(std::istream& in, OddsModelSet& models) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("odds coefficient file is empty");
  std::map<std::pair<std::string, int>, std::vector<double>> coefs;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string pat, a, name, value;
    if (!std::getline(ss, pat, ',') || !std::getline(ss, a, ',') || !std::getline(ss, name, ',') ||
        !std::getline(ss, value))
      throw ParseError("expected 4 fields", row);
    if (!value.empty() && value.back() == '\r') value.pop_back();
    coefs[{pat, static_cast<int>(parse_double(a, row))}].push_back(parse_double(value, row));
  }
  for (const auto& [key, v] : coefs) {
    const PatternMask r = PatternMask::from_string(key.first);
    if (r.dim() != models.dim()) throw ParseError("pattern " + key.first + " has wrong dimension");
    models.set_cell(r, key.second, Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
  }
}

}  // namespace mstage
