#include "mstage/numerics.hpp"

#include "mstage/errors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <numbers>
#include <thread>

namespace mstage {

namespace {
std::atomic<long> g_warnings{0};
std::atomic<bool> g_verbose{false};
std::mutex g_warn_mutex;
}  // namespace

void warn(const std::string& message) {
  ++g_warnings;
  if (g_verbose.load()) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    std::cerr << "warning: " << message << '\n';
  }
}
long warning_count() { return g_warnings.load(); }
void set_verbose_warnings(bool on) { g_verbose = on; }

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) {
    x += 0x9e3779b97f4a7c15ULL;
    s = splitmix64(x);
  }
}

Xoshiro256::result_type Xoshiro256::operator()() {
  auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  // 53 random bits mapped to [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() { return normal_(engine_); }

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::exponential(double rate) {
  if (!(rate > 0.0)) throw PreconditionError("exponential rate must be positive");
  return -std::log1p(-uniform()) / rate;
}

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

Eigen::VectorXd Rng::mvnormal(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  return MvNormal(mean, cov).sample(*this);
}

MvNormal::MvNormal(Eigen::VectorXd mean, const Eigen::MatrixXd& cov)
    : mean_(std::move(mean)), cov_(cov) {
  if (cov.rows() != mean_.size() || cov.cols() != mean_.size())
    throw PreconditionError("covariance dimension does not match mean");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw CholeskyError("covariance is not positive definite");
  chol_ = llt.matrixL();
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) + log_det);
}

Eigen::VectorXd MvNormal::sample(Rng& rng) const {
  Eigen::VectorXd z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean_ + chol_ * z;
}

double MvNormal::log_density(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
  return log_norm_ - 0.5 * u.squaredNorm();
}

double normal_log_density(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + z * z / var);
}

// ---------------------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& h, const Eigen::VectorXd& rhs, double ridge,
                          bool& ridge_used) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-13) {
    Eigen::VectorXd step = ldlt.solve(rhs);
    if (step.allFinite()) return step;
  }
  ridge_used = true;
  const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  Eigen::MatrixXd hr = h;
  hr.diagonal().array() += ridge * scale;
  Eigen::LDLT<Eigen::MatrixXd> ldlt2(hr);
  Eigen::VectorXd step = ldlt2.solve(rhs);
  if (!step.allFinite()) step = hr.completeOrthogonalDecomposition().solve(rhs);
  return step;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                         const Eigen::VectorXd& weights, const LogisticOptions& opts) {
  const Eigen::Index n = features.rows();
  const Eigen::Index p = features.cols();
  if (labels.size() != n || weights.size() != n)
    throw PreconditionError("fit_logistic: labels/weights length mismatch");
  if (n < p) throw PreconditionError("fit_logistic: fewer rows than features");
  double w1 = 0.0, w0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(weights(i) >= 0.0)) throw PreconditionError("fit_logistic: negative weight");
    if (labels(i) == 1.0)
      w1 += weights(i);
    else if (labels(i) == 0.0)
      w0 += weights(i);
    else
      throw PreconditionError("fit_logistic: labels must be 0 or 1");
  }
  if (!(w1 > 0.0) || !(w0 > 0.0))
    throw PreconditionError("fit_logistic: both classes must be present with positive weight");
  const double total = w0 + w1;

  LogisticFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd prob(n);
  auto gradient = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = features * beta;
    for (Eigen::Index i = 0; i < n; ++i) prob(i) = sigmoid(eta(i));
    return Eigen::VectorXd(features.transpose() *
                           (weights.array() * (labels - prob).array()).matrix());
  };

  Eigen::VectorXd grad = gradient(fit.coefficients);
  fit.gradient_norm = grad.cwiseAbs().maxCoeff() / total;
  while (fit.iterations < opts.max_iter) {
    if (fit.gradient_norm <= opts.tol) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd v = weights.array() * prob.array() * (1.0 - prob.array());
    const Eigen::MatrixXd info = features.transpose() * v.asDiagonal() * features;
    const Eigen::VectorXd step = solve_spd(info, grad, opts.ridge, fit.ridge_used);
    fit.coefficients += step;
    ++fit.iterations;
    if (fit.coefficients.cwiseAbs().maxCoeff() > opts.coef_cap) {
      fit.separated = true;
      fit.coefficients = fit.coefficients.cwiseMax(-opts.coef_cap).cwiseMin(opts.coef_cap);
      grad = gradient(fit.coefficients);
      fit.gradient_norm = grad.cwiseAbs().maxCoeff() / total;
      warn("logistic regression: perfect separation detected; coefficients capped");
      return fit;
    }
    grad = gradient(fit.coefficients);
    fit.gradient_norm = grad.cwiseAbs().maxCoeff() / total;
  }
  if (!fit.converged && fit.gradient_norm <= opts.tol) fit.converged = true;
  if (fit.ridge_used) warn("logistic regression: singular information, ridge applied");
  return fit;
}

Eigen::VectorXd fit_least_squares(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& weights) {
  const Eigen::MatrixXd xtwx = features.transpose() * weights.asDiagonal() * features;
  const Eigen::VectorXd xtwy = features.transpose() * (weights.array() * y.array()).matrix();
  bool ridge_used = false;
  return solve_spd(xtwx, xtwy, 1e-10, ridge_used);
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd finite_difference_jacobian(const VectorFunction& g, const Eigen::VectorXd& x) {
  const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = base_step * std::max(1.0, std::abs(x(j)));
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const Eigen::VectorXd gp = g(xp);
    const Eigen::VectorXd gm = g(xm);
    if (jac.size() == 0) jac.resize(gp.size(), x.size());
    jac.col(j) = (gp - gm) / (xp(j) - xm(j));
  }
  return jac;
}

RootSolveResult newton_solve(const VectorFunction& g, const JacobianFunction& jacobian,
                             const Eigen::VectorXd& x0, const NewtonOptions& opts) {
  if (!(opts.tol > 0.0)) throw PreconditionError("newton_solve: tol must be positive");
  RootSolveResult res;
  res.solution = x0;
  Eigen::VectorXd r = g(x0);
  if (!r.allFinite()) throw DomainError("newton_solve: non-finite residual at the starting point");
  res.residual_norm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;

  while (res.iterations < opts.max_iter) {
    if (res.residual_norm <= opts.tol) {
      res.converged = true;
      return res;
    }
    const Eigen::MatrixXd jac = jacobian ? jacobian(res.solution)
                                         : finite_difference_jacobian(g, res.solution);
    Eigen::VectorXd dx = jac.colPivHouseholderQr().solve(-r);
    if (!dx.allFinite()) dx = jac.completeOrthogonalDecomposition().solve(-r);
    if (!dx.allFinite()) break;

    bool accepted = false;
    double t = 1.0;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      const Eigen::VectorXd xt = res.solution + t * dx;
      Eigen::VectorXd rt;
      try {
        rt = g(xt);
      } catch (const DomainError&) {
        continue;
      } catch (const DegenerateError&) {
        continue;
      }
      if (!rt.allFinite()) continue;
      const double nt = rt.cwiseAbs().maxCoeff();
      if (nt < res.residual_norm) {
        res.solution = xt;
        r = rt;
        res.residual_norm = nt;
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) break;
  }
  res.converged = res.residual_norm <= opts.tol;
  return res;
}

// ---------------------------------------------------------------------------

double integrate_1d(const std::function<double(double)>& f, double lo, double hi, double tol,
                    double* error_estimate) {
  using boost::math::quadrature::gauss_kronrod;
  if (!(tol > 0.0)) throw PreconditionError("integrate_1d: tol must be positive");
  if (!std::isfinite(lo)) throw PreconditionError("integrate_1d: lower limit must be finite");
  auto checked = [&f](double y) {
    const double v = f(y);
    if (!std::isfinite(v)) throw DomainError("integrate_1d: non-finite integrand value");
    return v;
  };
  double err = 0.0;
  double value = 0.0;
  constexpr unsigned kMaxDepth = 20;
  if (std::isinf(hi)) {
    auto mapped = [&](double t) {
      const double s = t / (1.0 - t);
      const double jac = 1.0 / ((1.0 - t) * (1.0 - t));
      return checked(lo + s) * jac;
    };
    value = gauss_kronrod<double, 15>::integrate(mapped, 0.0, 1.0, kMaxDepth, tol, &err);
  } else {
    if (hi < lo) return -integrate_1d(f, hi, lo, tol, error_estimate);
    value = gauss_kronrod<double, 15>::integrate(checked, lo, hi, kMaxDepth, tol, &err);
  }
  if (error_estimate) *error_estimate = err;
  return value;
}

// ---------------------------------------------------------------------------

int default_threads() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 0) threads = default_threads();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------

double quantile_type7(std::vector<double> values, double prob) {
  if (values.empty()) throw PreconditionError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double sample_mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_sd(const std::vector<double>& values) {
  if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = sample_mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace mstage
