#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/numerics.hpp"
#include "mstage/odds.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <utility>
#include <vector>

namespace mstage {

enum class ImputationFamily { discrete, gaussian, cox_em };

ImputationFamily parse_family(const std::string& name);
std::string family_name(ImputationFamily f);

/// Estimated complete-case extrapolation law p(x_rbar | x_r, 1_d, w_a, a).
/// Missing coordinates are always drawn one at a time in ascending order,
/// each from its conditional given everything already fixed, so that the
/// sensitivity tilts act on univariate conditionals.
class ImputationModel {
 public:
  virtual ~ImputationModel() = default;
  virtual ImputationFamily family() const = 0;
  virtual int dim() const = 0;
  virtual std::unique_ptr<ImputationModel> clone() const = 0;

  /// Overwrites the coordinates of x not observed under r with one draw.
  virtual void draw(PatternMask r, int a, const Eigen::VectorXd& w, Eigen::VectorXd& x,
                    Rng& rng) const = 0;
  /// E[x | x_r, 1_d, w, a] under the (possibly tilted) law.
  virtual Eigen::VectorXd conditional_mean(PatternMask r, int a, const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& x) const = 0;

  /// Finite-support families can list every completion with its probability.
  virtual bool exact_support() const { return false; }
  virtual std::vector<std::pair<Eigen::VectorXd, double>> support(PatternMask r, int a,
                                                                  const Eigen::VectorXd& w,
                                                                  const Eigen::VectorXd& x) const;

  /// Bernoulli tilt parameter applied to every binary conditional (0.5 = none).
  virtual void set_zeta(double zeta);
  /// Gaussian tilt parameter applied to every Gaussian conditional (0 = none).
  virtual void set_xi(double xi);
  double zeta() const { return zeta_; }
  double xi() const { return xi_; }

 protected:
  double zeta_ = 0.5;
  double xi_ = 0.0;
};

/// Shared machinery for binary covariates: subclasses give an unnormalized
/// joint weight of a full covariate vector, the base class derives the
/// sequential conditionals.
class BinaryJointImputation : public ImputationModel {
 public:
  int dim() const override { return dim_; }
  void draw(PatternMask r, int a, const Eigen::VectorXd& w, Eigen::VectorXd& x,
            Rng& rng) const override;
  Eigen::VectorXd conditional_mean(PatternMask r, int a, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& x) const override;
  bool exact_support() const override { return true; }
  std::vector<std::pair<Eigen::VectorXd, double>> support(PatternMask r, int a,
                                                          const Eigen::VectorXd& w,
                                                          const Eigen::VectorXd& x) const override;
  void set_xi(double xi) override;

  /// Unnormalized weight of x (all coordinates 0/1) given (w, a).
  virtual double joint_weight(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const = 0;
  /// Untilted P(x_j = 1 | coordinates in `fixed` as in x, w, a).
  double conditional_prob(int a, const Eigen::VectorXd& w, std::uint32_t fixed_mask,
                          std::uint32_t xbits, int j) const;

 protected:
  explicit BinaryJointImputation(int dim) : dim_(dim) {}
  /// Completion weights over the missing coordinates; may fall back.
  virtual std::vector<double> completion_weights(PatternMask r, int a, const Eigen::VectorXd& w,
                                                 std::uint32_t obs_bits) const;
  int dim_;
};

/// Exact complete-case frequencies of binary x within discrete (w, a) cells.
/// Zero-mass conditioning cells fall back first to the cell's marginal over
/// x_r and then to the pooled-over-w frequencies of a.
class DiscreteImputation : public BinaryJointImputation {
 public:
  explicit DiscreteImputation(const MissingDataset& ds);
  ImputationFamily family() const override { return ImputationFamily::discrete; }
  std::unique_ptr<ImputationModel> clone() const override {
    return std::make_unique<DiscreteImputation>(*this);
  }
  double joint_weight(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const override;
  /// Stored conditional P(x | 1_d, w, a) for a full vector x.
  double probability(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const;

 protected:
  std::vector<double> completion_weights(PatternMask r, int a, const Eigen::VectorXd& w,
                                         std::uint32_t obs_bits) const override;

 private:
  const std::vector<double>* cell_counts(int a, const Eigen::VectorXd& w) const;
  std::map<std::pair<int, std::vector<double>>, std::vector<double>> counts_;
  std::map<int, std::vector<double>> pooled_;
};

/// Gaussian complete-case law. With discrete outcomes and enough complete
/// cases in every (w, a) stratum, each stratum gets its own mean and
/// covariance; otherwise the mean is linear in (1, w) within each a.
class GaussianImputation : public ImputationModel {
 public:
  explicit GaussianImputation(const MissingDataset& ds);
  ImputationFamily family() const override { return ImputationFamily::gaussian; }
  int dim() const override { return dim_; }
  std::unique_ptr<ImputationModel> clone() const override {
    return std::make_unique<GaussianImputation>(*this);
  }
  void draw(PatternMask r, int a, const Eigen::VectorXd& w, Eigen::VectorXd& x,
            Rng& rng) const override;
  Eigen::VectorXd conditional_mean(PatternMask r, int a, const Eigen::VectorXd& w,
                                   const Eigen::VectorXd& x) const override;
  void set_zeta(double zeta) override;

  bool stratified() const { return stratified_; }
  /// Mean and covariance of x given (w, a) among complete cases.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> parameters(int a, const Eigen::VectorXd& w) const;
  /// Replace the parameters of one stratum (stratified models only).
  void set_parameters(int a, const Eigen::VectorXd& w, const Eigen::VectorXd& mean,
                      const Eigen::MatrixXd& cov);
  bool jittered() const { return jittered_; }

 private:
  struct Cell {
    Eigen::MatrixXd coef;  // d x (1 + q); stratified cells use q = 0
    Eigen::MatrixXd cov;
  };
  const Cell& cell(int a, const Eigen::VectorXd& w) const;
  /// Untilted conditional mean/variance of x_j given coordinates in `known`.
  std::pair<double, double> conditional(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                        const std::vector<int>& known, const Eigen::VectorXd& x,
                                        int j) const;
  int dim_ = 0;
  bool stratified_ = false;
  bool jittered_ = false;
  std::map<std::pair<int, std::vector<double>>, Cell> cells_;
};

// ---------------------------------------------------------------------------
// Survival model with binary covariates: p(y, delta | x) =
// gamma_x^delta nu2^(1-delta) exp(-y (gamma_x + nu2)), fitted by EM with the
// missing covariates integrated out under CCMV.

struct SurvivalEmOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct SurvivalEmFit {
  Eigen::VectorXd gamma;  // indexed by covariate bits (x1 is bit 0)
  double nu2 = 0.0;
  Eigen::VectorXd pi;     // marginal law of x, same indexing
  std::vector<double> loglik;  // observed-data log-likelihood per iterate
  int iterations = 0;
  bool converged = false;
};

/// P(R = 1_d | x, y, delta) implied by the odds models.
double complete_propensity(const OddsModelSet& odds, int delta, const Eigen::VectorXd& x, double y,
                           bool warn_on_clip = true);

SurvivalEmFit fit_survival_em(const MissingDataset& ds, const OddsModelSet& odds,
                              const SurvivalEmOptions& opts = {});

/// Imputation law p(x | 1_d, y, delta) propto p(x, R = 1_d) P(R = 1_d | x, y, delta)
/// p(y, delta | x) / P(R = 1_d | x), with the last factor by quadrature.
class CoxEmImputation : public BinaryJointImputation {
 public:
  CoxEmImputation(const MissingDataset& ds, const OddsModelSet& odds, SurvivalEmFit em);
  ImputationFamily family() const override { return ImputationFamily::cox_em; }
  std::unique_ptr<ImputationModel> clone() const override {
    return std::make_unique<CoxEmImputation>(*this);
  }
  double joint_weight(int a, const Eigen::VectorXd& w, std::uint32_t xbits) const override;

  const SurvivalEmFit& em() const { return em_; }
  /// P(R = 1_d | x) = sum_delta int P(R = 1_d | x, y, delta) p(y, delta | x) dy.
  double complete_given_x(std::uint32_t xbits) const { return p11_given_x_.at(xbits); }
  double complete_joint(std::uint32_t xbits) const { return p_x11_.at(xbits); }

 private:
  OddsModelSet odds_;
  SurvivalEmFit em_;
  std::vector<double> p_x11_;
  std::vector<double> p11_given_x_;
};

/// Probability that the survival model assigns to (y, delta) given x.
double survival_density(const SurvivalEmFit& em, std::uint32_t xbits, double y, int delta);

struct ImputationOptions {
  const OddsModelSet* odds = nullptr;  // required by cox_em
};

std::unique_ptr<ImputationModel> fit_imputation(const MissingDataset& ds, ImputationFamily family,
                                                const ImputationOptions& opts = {});

// ---------------------------------------------------------------------------
// Draws

/// Completions of one record under one pattern view: columns of `x` with
/// probabilities `prob` (1/M each for Monte Carlo draws).
struct DrawSet {
  Eigen::MatrixXd x;
  Eigen::VectorXd prob;
  Eigen::Index size() const { return x.cols(); }
};

/// Imputation draws for every record in its own pattern and, optionally, for
/// every complete record in each incomplete pattern view (keep x_r, redraw
/// the rest). Record i in view r uses RNG substream i * 2^d + r. M = 0
/// enumerates the exact support.
class ImputationDraws {
 public:
  ImputationDraws(const ImputationModel& model, const MissingDataset& ds, int M,
                  std::uint64_t seed, bool all_views, int threads = 1);

  int M() const { return M_; }
  const DrawSet& own(std::size_t i) const { return own_[i]; }
  bool has_view(PatternMask r) const { return views_.contains(r.bits()); }
  /// Draws of complete record i in pattern view r.
  const DrawSet& view(std::size_t i, PatternMask r) const;
  std::vector<PatternMask> view_patterns() const;

 private:
  int M_ = 0;
  int dim_ = 0;
  std::vector<DrawSet> own_;
  std::map<std::uint32_t, std::vector<DrawSet>> views_;
};

DrawSet draw_completions(const ImputationModel& model, PatternMask r, int a,
                         const Eigen::VectorXd& w, const Eigen::VectorXd& x, int M, Rng& rng);

struct StackedRow {
  std::size_t source_id = 0;
  int imp_id = 0;
  Eigen::VectorXd x;
  int a = 0;
  Eigen::VectorXd w;
  double weight = 1.0;
};

/// M completed copies of the dataset, ordered j-major then i.
struct StackedDataset {
  Schema schema;
  int M = 0;
  std::vector<StackedRow> rows;
};

StackedDataset impute_stacked(const ImputationModel& model, const MissingDataset& ds, int M,
                              std::uint64_t seed, int threads = 1);
StackedDataset stack_draws(const ImputationDraws& draws, const MissingDataset& ds);
void write_stacked_csv(std::ostream& out, const StackedDataset& st);
StackedDataset read_stacked_csv(std::istream& in, const Schema& schema);

/// Stacked-imputation estimate of E[h]; M = 0 uses exact conditionals.
Eigen::VectorXd regression_adjust(const ImputationModel& model, const MissingDataset& ds,
                                  const OdfSpec& f, int M, std::uint64_t seed);

/// Success probability after the rejection-sampling tilt with parameter zeta.
double tilt_binary(double p, double zeta);
/// (mean, variance) of N(mu, s2) reweighted by exp(-xi x^2).
std::pair<double, double> tilt_gaussian(double mu, double s2, double xi);

}  // namespace mstage
