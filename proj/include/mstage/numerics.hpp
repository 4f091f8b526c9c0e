#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace mstage {

// ---------------------------------------------------------------------------
// Random numbers

/// xoshiro256** seeded through splitmix64. Satisfies UniformRandomBitGenerator
/// so it plugs into the <random> distributions.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;
  explicit Xoshiro256(std::uint64_t seed);
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of the independent substream `index` of `seed`. Replicate b of a
/// bootstrap always sees substream_seed(seed, b) regardless of scheduling.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

/// Value-typed deterministic random stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(substream_seed(seed, index));
  }

  double uniform();
  double normal();
  bool bernoulli(double p);
  double exponential(double rate);
  std::size_t index(std::size_t n);  // uniform on {0,...,n-1}
  Eigen::VectorXd mvnormal(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

  Xoshiro256& engine() { return engine_; }

 private:
  Xoshiro256 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Multivariate normal sampler with a precomputed Cholesky factor.
class MvNormal {
 public:
  MvNormal(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);  // throws CholeskyError
  Eigen::VectorXd sample(Rng& rng) const;
  double log_density(const Eigen::VectorXd& x) const;
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;  // lower
  double log_norm_ = 0.0;
};

/// Log density of N(mean, var) at x.
double normal_log_density(double x, double mean, double var);

// ---------------------------------------------------------------------------
// Logistic regression (IRLS)

struct LogisticOptions {
  double tol = 1e-8;         // on the sup-norm of the mean weighted gradient
  int max_iter = 50;
  double coef_cap = 30.0;    // separation threshold
  double ridge = 1e-8;       // used only on singular information
};

struct LogisticFit {
  Eigen::VectorXd coefficients;  // intercept first when the design has one
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool separated = false;
  bool ridge_used = false;

  double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& features) const {
    return coefficients.dot(features);
  }
};

/// Weighted Bernoulli maximum likelihood by iteratively reweighted least
/// squares, started from zero. `features` must already contain the intercept
/// column if one is wanted.
LogisticFit fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                         const Eigen::VectorXd& weights, const LogisticOptions& opts = {});

double sigmoid(double z);

/// Weighted least squares coefficients (X'WX)^{-1} X'Wy with ridge fallback.
Eigen::VectorXd fit_least_squares(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& weights);

// ---------------------------------------------------------------------------
// Root finding

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFunction = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 100;
  int max_halvings = 40;
};

struct RootSolveResult {
  Eigen::VectorXd solution;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Damped Newton iteration on g(x) = 0. A step is accepted only if it lowers
/// the sup-norm residual; otherwise it is halved. Without an analytic Jacobian
/// central differences are used.
RootSolveResult newton_solve(const VectorFunction& g, const JacobianFunction& jacobian,
                             const Eigen::VectorXd& x0, const NewtonOptions& opts = {});

Eigen::MatrixXd finite_difference_jacobian(const VectorFunction& g, const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------
// Quadrature

constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Adaptive Gauss-Kronrod quadrature of f over [lo, hi]. An infinite upper
/// limit is mapped to [0, 1) through t = (y - lo) / (1 + y - lo).
double integrate_1d(const std::function<double(double)>& f, double lo, double hi,
                    double tol = 1e-10, double* error_estimate = nullptr);

// ---------------------------------------------------------------------------
// Parallelism

/// Number of worker threads to use when the caller passes 0.
int default_threads();

/// Runs fn(i) for i in [0, n) on `threads` workers. Exceptions from workers
/// are rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Small statistics helpers

/// Type-7 (linear interpolation) sample quantile of an unsorted sample.
double quantile_type7(std::vector<double> values, double prob);
double sample_mean(const std::vector<double>& values);
double sample_sd(const std::vector<double>& values);

}  // namespace mstage
