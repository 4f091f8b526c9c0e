#include "mstage/simgen.hpp"

#include "mstage/errors.hpp"
#include "mstage/numerics.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace mstage {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_double(trim(tok)));
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> parse_fixed(const std::string& key, const std::string& value) {
  const auto v = parse_list(value);
  if (v.size() != N)
    throw ConfigurationError("key '" + key + "' needs " + std::to_string(N) + " values");
  Eigen::Matrix<double, N, 1> out;
  for (int k = 0; k < N; ++k) out(k) = v[k];
  return out;
}

template <class Vec>
std::string join(const Vec& v) {
  std::string s;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) s += ',';
    s += format_double(v(k));
  }
  return s;
}

const std::string kRecordKeys[] = {"11", "10", "01", "00"};

}  // namespace

KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", row);
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read_key_values(in);
}

// ---------------------------------------------------------------------------

std::array<double, 4> CoxSimSpec::joint() const {
  const double p11 = p1 * p2 + corr * std::sqrt(p1 * (1 - p1) * p2 * (1 - p2));
  const std::array<double, 4> j{1.0 - p1 - p2 + p11, p1 - p11, p2 - p11, p11};
  for (double c : j)
    if (!(c >= 0.0 && c <= 1.0))
      throw ConfigurationError("correlation " + format_double(corr) +
                               " is infeasible for the given marginals");
  return j;
}

void CoxSimSpec::validate() const {
  if (!(p1 > 0 && p1 < 1 && p2 > 0 && p2 < 1))
    throw ConfigurationError("covariate probabilities must lie in (0, 1)");
  if (!(nu1 > 0 && nu2 > 0)) throw ConfigurationError("hazard rates must be positive");
  joint();
}

CoxSimSpec CoxSimSpec::from_key_values(const KeyValues& kv) {
  CoxSimSpec s;
  for (const auto& [k, v] : kv) {
    if (k == "kind") continue;
    if (k == "p1") s.p1 = parse_double(v);
    else if (k == "p2") s.p2 = parse_double(v);
    else if (k == "corr") s.corr = parse_double(v);
    else if (k == "beta") s.beta = parse_fixed<2>(k, v);
    else if (k == "nu1") s.nu1 = parse_double(v);
    else if (k == "nu2") s.nu2 = parse_double(v);
    else if (k == "odds01") s.odds01 = parse_fixed<4>(k, v);
    else if (k == "odds10") s.odds10 = parse_fixed<4>(k, v);
    else throw ConfigurationError("unknown survival simulation key '" + k + "'");
  }
  s.validate();
  return s;
}

void CoxSimSpec::write(std::ostream& out) const {
  out << "kind = cox\n"
      << "p1 = " << format_double(p1) << '\n'
      << "p2 = " << format_double(p2) << '\n'
      << "corr = " << format_double(corr) << '\n'
      << "beta = " << join(beta) << '\n'
      << "nu1 = " << format_double(nu1) << '\n'
      << "nu2 = " << format_double(nu2) << '\n'
      << "odds01 = " << join(odds01) << '\n'
      << "odds10 = " << join(odds10) << '\n';
}

MissingDataset gen_cox(const CoxSimSpec& spec, std::size_t n, std::uint64_t seed,
                       bool apply_masks) {
  spec.validate();
  const auto joint = spec.joint();
  std::vector<ObservedRecord> recs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, i);
    const double u = rng.uniform();
    std::uint32_t bits = 3;
    double acc = 0.0;
    for (std::uint32_t b = 0; b < 4; ++b) {
      acc += joint[b];
      if (u < acc) {
        bits = b;
        break;
      }
    }
    Eigen::Vector2d x(bits & 1U, (bits >> 1) & 1U);
    const double t = rng.exponential(spec.nu1 * std::exp(x.dot(spec.beta)));
    const double c = rng.exponential(spec.nu2);
    const double y = std::min(t, c);
    const int delta = t <= c ? 1 : 0;

    const double q01 = std::exp(spec.odds01(0) + spec.odds01(1) * x(1) + spec.odds01(2) * y +
                                spec.odds01(3) * delta);
    const double q10 = std::exp(spec.odds10(0) + spec.odds10(1) * x(0) + spec.odds10(2) * y +
                                spec.odds10(3) * delta);
    const double v = rng.uniform() * (1.0 + q01 + q10);
    std::uint32_t mask = 3;
    if (v >= 1.0) mask = v < 1.0 + q01 ? 2U : 1U;  // "01" keeps x2, "10" keeps x1
    if (!apply_masks) mask = 3;

    auto& rec = recs[i];
    rec.x = x;
    for (int j = 0; j < 2; ++j)
      if (!((mask >> j) & 1U)) rec.x(j) = std::numeric_limits<double>::quiet_NaN();
    rec.mask = PatternMask(mask, 2);
    rec.a = delta;
    rec.w = Eigen::VectorXd::Constant(1, y);
  }
  return MissingDataset(Schema::survival({"x1", "x2"}), std::move(recs));
}

Eigen::Vector2d beta_from_gamma(const std::array<double, 4>& g) {
  for (double v : g)
    if (!(v > 0.0)) throw DomainError("hazards must be positive");
  const double l0 = std::log(g[0]), l1 = std::log(g[1]), l2 = std::log(g[2]), l3 = std::log(g[3]);
  return {0.5 * ((l1 - l0) + (l3 - l2)), 0.5 * ((l2 - l0) + (l3 - l1))};
}

TransformedMleFit fit_transformed_mle(const MissingDataset& ds, const OddsModelSet& odds,
                                      const SurvivalEmOptions& opts) {
  if (ds.schema().kind != SchemaKind::survival || ds.dim() != 2)
    throw ConfigurationError("the transformed MLE needs survival data with two covariates");
  const auto em = fit_survival_em(ds, odds, opts);
  TransformedMleFit fit;
  for (int b = 0; b < 4; ++b) {
    fit.gamma[b] = em.gamma(b);
    // A cell whose expected event count vanished has MLE hazard 0 and an
    // infinite log-ratio, so there is no finite coefficient to report.
    if (fit.gamma[b] == 0.0)
      throw DegenerateError("covariate cell " + std::to_string(b) +
                            " has no expected events; the log-ratio coefficients are infinite");
  }
  fit.nu2 = em.nu2;
  fit.beta = beta_from_gamma(fit.gamma);
  fit.iterations = em.iterations;
  fit.converged = em.converged;
  fit.loglik = em.loglik;
  return fit;
}

// ---------------------------------------------------------------------------

BinaryTreatSimSpec BinaryTreatSimSpec::standard() {
  BinaryTreatSimSpec s;
  // (y, a) order: 00, 01, 10, 11
  const double probs[4][4] = {{1.0 / 16, 1.0 / 12, 1.0 / 16, 1.0 / 24},
                              {1.0 / 12, 1.0 / 8, 1.0 / 24, 1.0 / 12},
                              {1.0 / 16, 1.0 / 24, 1.0 / 16, 1.0 / 12},
                              {1.0 / 36, 1.0 / 24, 1.0 / 24, 1.0 / 18}};
  const double means[4][4][2] = {{{3, 4}, {4, 4}, {3, 2}, {2, 2}},
                                 {{2, 19.0 / 5}, {2, 16.0 / 5}, {1, 1.5}, {3, 11.0 / 5}},
                                 {{13.0 / 5, 2}, {14.0 / 5, 1}, {3.125, 2.5}, {1.9, 1.5}},
                                 {{3, 4}, {4, 4}, {3, 2}, {2, 2}}};
  const double covs[4][2] = {{0.5, 0.1}, {0.5, 0.2}, {0.4, 0.1}, {0.5, 0.1}};
  const std::uint32_t bits[4] = {3U, 1U, 2U, 0U};  // R = 11, 10, 01, 00
  for (int r = 0; r < 4; ++r) {
    for (int ya = 0; ya < 4; ++ya) {
      Component c;
      c.prob = probs[r][ya];
      c.mean = Eigen::Vector2d(means[r][ya][0], means[r][ya][1]);
      c.cov << covs[ya][0], covs[ya][1], covs[ya][1], covs[ya][0];
      s.cells[{bits[r], ya >> 1, ya & 1}] = c;
    }
  }
  return s;
}

namespace {

std::string cell_suffix(std::uint32_t bits, int y, int a) {
  return PatternMask(bits, 2).to_string() + "." + std::to_string(y) + std::to_string(a);
}

}  // namespace

BinaryTreatSimSpec BinaryTreatSimSpec::from_key_values(const KeyValues& kv) {
  BinaryTreatSimSpec s = standard();
  std::map<std::string, Component*> by_suffix;
  for (auto& [key, c] : s.cells)
    by_suffix[cell_suffix(std::get<0>(key), std::get<1>(key), std::get<2>(key))] = &c;
  for (const auto& [k, v] : kv) {
    if (k == "kind") continue;
    const auto dot = k.find('.');
    auto it = dot == std::string::npos ? by_suffix.end() : by_suffix.find(k.substr(dot + 1));
    if (it == by_suffix.end())
      throw ConfigurationError("unknown binary-treatment simulation key '" + k + "'");
    const std::string field = k.substr(0, dot);
    if (field == "prob") {
      it->second->prob = parse_double(v);
    } else if (field == "mean") {
      it->second->mean = parse_fixed<2>(k, v);
    } else if (field == "cov") {
      const auto c = parse_fixed<3>(k, v);
      it->second->cov << c(0), c(1), c(1), c(2);
    } else {
      throw ConfigurationError("unknown binary-treatment simulation key '" + k + "'");
    }
  }
  s.validate();
  return s;
}

void BinaryTreatSimSpec::validate() const {
  if (cells.size() != 16) throw ConfigurationError("the binary-treatment simulation needs all 16 cells");
  double total = 0.0;
  for (const auto& [key, c] : cells) {
    if (!(c.prob >= 0.0)) throw ConfigurationError("cell probabilities must be nonnegative");
    total += c.prob;
    Eigen::LLT<Eigen::Matrix2d> llt(c.cov);
    if (llt.info() != Eigen::Success || c.cov(0, 1) != c.cov(1, 0))
      throw ConfigurationError("covariance of cell " +
                               cell_suffix(std::get<0>(key), std::get<1>(key), std::get<2>(key)) +
                               " is not positive definite");
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigurationError("cell probabilities must sum to 1");
}

void BinaryTreatSimSpec::write(std::ostream& out) const {
  out << "kind = binary-treat\n";
  for (const auto& [key, c] : cells) {
    const auto sfx = cell_suffix(std::get<0>(key), std::get<1>(key), std::get<2>(key));
    out << "prob." << sfx << " = " << format_double(c.prob) << '\n'
        << "mean." << sfx << " = " << join(c.mean) << '\n'
        << "cov." << sfx << " = " << format_double(c.cov(0, 0)) << ','
        << format_double(c.cov(0, 1)) << ',' << format_double(c.cov(1, 1)) << '\n';
  }
}

double BinaryTreatSimSpec::ccmv_gap() const {
  double gap = 0.0;
  for (const auto& [key, c] : cells) {
    const auto [bits, y, a] = key;
    if (bits == 3U) continue;
    const auto& ref = cells.at({3U, y, a});
    if (bits == 0U) {
      gap = std::max({gap, (c.mean - ref.mean).cwiseAbs().maxCoeff(),
                      (c.cov - ref.cov).cwiseAbs().maxCoeff()});
      continue;
    }
    const int j = bits == 1U ? 0 : 1;  // observed coordinate
    const int k = 1 - j;
    auto conditional = [&](const Component& comp) {
      const double slope = comp.cov(k, j) / comp.cov(j, j);
      return Eigen::Vector3d(comp.mean(k) - slope * comp.mean(j), slope,
                             comp.cov(k, k) - slope * comp.cov(k, j));
    };
    gap = std::max(gap, (conditional(c) - conditional(ref)).cwiseAbs().maxCoeff());
  }
  return gap;
}

namespace {

double gauss2(const BinaryTreatSimSpec::Component& c, const Eigen::Vector2d& x) {
  const Eigen::Vector2d d = x - c.mean;
  const double det = c.cov.determinant();
  return std::exp(-0.5 * d.dot(c.cov.inverse() * d)) / (2.0 * M_PI * std::sqrt(det));
}

}  // namespace

double BinaryTreatSimSpec::density(const Eigen::Vector2d& x) const {
  double s = 0.0;
  for (const auto& [_, c] : cells) s += c.prob * gauss2(c, x);
  return s;
}

double BinaryTreatSimSpec::propensity(const Eigen::Vector2d& x) const {
  double num = 0.0, den = 0.0;
  for (const auto& [key, c] : cells) {
    const double v = c.prob * gauss2(c, x);
    den += v;
    if (std::get<2>(key) == 1) num += v;
  }
  return num / den;
}

double BinaryTreatSimSpec::regression(int a, const Eigen::Vector2d& x) const {
  double num = 0.0, den = 0.0;
  for (const auto& [key, c] : cells) {
    if (std::get<2>(key) != a) continue;
    const double v = c.prob * gauss2(c, x);
    den += v;
    if (std::get<1>(key) == 1) num += v;
  }
  return num / den;
}

namespace {

struct CellSampler {
  std::vector<std::tuple<std::uint32_t, int, int>> keys;
  std::vector<double> cum;
  std::vector<MvNormal> normals;

  explicit CellSampler(const BinaryTreatSimSpec& spec) {
    double acc = 0.0;
    for (const auto& [key, c] : spec.cells) {
      keys.push_back(key);
      acc += c.prob;
      cum.push_back(acc);
      normals.emplace_back(Eigen::VectorXd(c.mean), Eigen::MatrixXd(c.cov));
    }
  }
  std::size_t pick(double u) const {
    for (std::size_t k = 0; k < cum.size(); ++k)
      if (u < cum[k]) return k;
    return cum.size() - 1;
  }
};

}  // namespace

MissingDataset gen_binary_treat(const BinaryTreatSimSpec& spec, std::size_t n, std::uint64_t seed,
                                bool apply_masks) {
  spec.validate();
  const CellSampler sampler(spec);
  std::vector<ObservedRecord> recs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, i);
    const std::size_t k = sampler.pick(rng.uniform());
    const auto [bits0, y, a] = sampler.keys[k];
    const std::uint32_t bits = apply_masks ? bits0 : 3U;
    auto& rec = recs[i];
    rec.x = sampler.normals[k].sample(rng);
    for (int j = 0; j < 2; ++j)
      if (!((bits >> j) & 1U)) rec.x(j) = std::numeric_limits<double>::quiet_NaN();
    rec.mask = PatternMask(bits, 2);
    rec.a = a;
    rec.w = Eigen::VectorXd::Constant(1, y);
  }
  return MissingDataset(Schema::treatment({"x1", "x2"}), std::move(recs));
}

double true_ate_mc(const BinaryTreatSimSpec& spec, std::size_t draws, std::uint64_t seed,
                   int threads) {
  spec.validate();
  const CellSampler sampler(spec);
  constexpr std::size_t kChunks = 64;
  std::vector<double> sums(kChunks, 0.0);
  parallel_for(kChunks, threads, [&](std::size_t chunk) {
    Rng rng = Rng::substream(seed, chunk);
    const std::size_t lo = draws * chunk / kChunks, hi = draws * (chunk + 1) / kChunks;
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t k = sampler.pick(rng.uniform());
      const Eigen::Vector2d x = sampler.normals[k].sample(rng);
      s += spec.regression(1, x) - spec.regression(0, x);
    }
    sums[chunk] = s;
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(draws);
}

}  // namespace mstage
