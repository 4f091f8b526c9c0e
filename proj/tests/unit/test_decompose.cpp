#include <doctest.h>

#include "enumerated_joint.hpp"

#include "mstage/decompose.hpp"
#include "mstage/errors.hpp"

#include <cmath>

using namespace mstage;
namespace ts = testing_support;

namespace {

OdfSpec two_dim_odf() {
  OdfSpec f;
  f.output_dim = 2;
  f.by_pattern[0] = [](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    return Eigen::Vector2d(x(0) + w(0), x(0) * x(1) - 0.5 * w(0)).eval();
  };
  f.by_pattern[1] = [](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    return Eigen::Vector2d(2.0 * x(1) - w(0), 1.0 + x(0) * w(0)).eval();
  };
  return f;
}

Eigen::Vector2d odf_at(const ts::Atom& at) {
  const double x1 = at.xbits & 1U, x2 = (at.xbits >> 1) & 1U, y = at.y;
  if (at.a == 0) return {x1 + y, x1 * x2 - 0.5 * y};
  return {2.0 * x2 - y, 1.0 + x1 * y};
}

Eigen::Vector2d brute(const ts::EnumeratedJoint& j, std::uint32_t r, int a) {
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  for (const auto& at : j.atoms)
    if (at.r == r && at.a == a) s += at.p * odf_at(at);
  return s;
}

}  // namespace

TEST_SUITE("decompose") {
  TEST_CASE("all three forms equal the cell expectation under the true models") {
    const auto joint = ts::treatment_joint();
    const auto ds = joint.observed();
    const auto odds = joint.true_odds();
    DiscreteImputation imp(ds);
    const ImputationDraws draws(imp, ds, 0, 1, true);
    const auto f = two_dim_odf();
    for (std::uint32_t r = 0; r < 4; ++r)
      for (int a = 0; a < 2; ++a) {
        const PatternMask m(r, 2);
        const Eigen::Vector2d truth = brute(joint, r, a);
        CHECK((ipw_cell(ds, odds, f, m, a) - truth).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((ra_cell(ds, draws, f, m, a) - truth).cwiseAbs().maxCoeff() < 1e-12);
        const auto terms = dr_cell_terms(ds, odds, draws, f, m, a);
        CHECK((terms.total() - truth).cwiseAbs().maxCoeff() < 1e-12);
        if (m.is_full()) {
          CHECK((terms.augmentation - terms.ipw).cwiseAbs().maxCoeff() == 0.0);
          CHECK((terms.ra - terms.ipw).cwiseAbs().maxCoeff() < 1e-14);
        }
      }
  }

  TEST_CASE("the augmentation cancels whichever leg is wrong") {
    const auto joint = ts::treatment_joint();
    const auto ds = joint.observed();
    auto bad = joint.odds_coef;
    for (auto& [key, c] : bad) c(0) += 0.5;
    const auto wrong_odds = joint.odds_with(bad);
    DiscreteImputation imp(ds);
    const ImputationDraws draws(imp, ds, 0, 1, true);
    const auto f = two_dim_odf();
    const PatternMask r(2U, 2);
    const Eigen::Vector2d truth = brute(joint, 2U, 1);
    const auto terms = dr_cell_terms(ds, wrong_odds, draws, f, r, 1);
    CHECK((terms.ipw - truth).cwiseAbs().maxCoeff() > 1e-3);
    CHECK((terms.total() - truth).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("Monte Carlo draws approach the exact regression form") {
    const auto joint = ts::treatment_joint();
    const auto ds = joint.observed();
    DiscreteImputation imp(ds);
    const ImputationDraws exact(imp, ds, 0, 1, false);
    const ImputationDraws mc(imp, ds, 4000, 9, false);
    const auto f = two_dim_odf();
    for (std::uint32_t r = 0; r < 3; ++r) {
      const PatternMask m(r, 2);
      const Eigen::VectorXd diff = ra_cell(ds, mc, f, m, 0) - ra_cell(ds, exact, f, m, 0);
      CHECK(diff.cwiseAbs().maxCoeff() < 0.01);
    }
  }

  TEST_CASE("doubly robust form needs pattern views") {
    const auto joint = ts::treatment_joint();
    const auto ds = joint.observed();
    DiscreteImputation imp(ds);
    const ImputationDraws own_only(imp, ds, 0, 1, false);
    CHECK_FALSE(own_only.has_view(PatternMask(1U, 2)));
    CHECK_THROWS_AS(dr_cell_terms(ds, joint.true_odds(), own_only, two_dim_odf(), PatternMask(1U, 2), 0),
                    PreconditionError);
  }
}
