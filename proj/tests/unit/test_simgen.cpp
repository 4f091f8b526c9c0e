#include <doctest.h>

#include "mstage/errors.hpp"
#include "mstage/numerics.hpp"
#include "mstage/simgen.hpp"

#include <cmath>
#include <sstream>

using namespace mstage;

TEST_SUITE("simgen") {
  TEST_CASE("survival simulation: pattern shares, covariate law and events") {
    const CoxSimSpec spec;
    const auto ds = gen_cox(spec, 100000, 41);
    double share[4] = {0, 0, 0, 0};
    for (const auto& rec : ds.records()) share[rec.mask.bits()] += 1e-5;
    CHECK(share[0] == 0.0);
    CHECK(std::fabs(share[2] - 0.394) < 0.015);
    CHECK(std::fabs(share[1] - 0.302) < 0.015);
    CHECK(std::fabs(share[3] - 0.304) < 0.015);

    const auto full = gen_cox(spec, 100000, 41, false);
    const auto joint = spec.joint();
    double freq[4] = {0, 0, 0, 0};
    for (const auto& rec : full.records())
      freq[static_cast<int>(rec.x(0)) + 2 * static_cast<int>(rec.x(1))] += 1e-5;
    for (int b = 0; b < 4; ++b) CHECK(std::fabs(freq[b] - joint[b]) < 0.01);
    CHECK(joint[0] + joint[1] + joint[2] + joint[3] == doctest::Approx(1.0));
    CHECK(joint[1] + joint[3] == doctest::Approx(spec.p1));
    CHECK(joint[2] + joint[3] == doctest::Approx(spec.p2));

    // Same seed, same data; masks do not change the covariates drawn.
    const auto again = gen_cox(spec, 1000, 41);
    for (std::size_t i = 0; i < again.size(); ++i) {
      CHECK(again[i].w(0) == ds[i].w(0));
      CHECK(again[i].a == full[i].a);
    }
  }

  TEST_CASE("with beta = 0 the event fraction is nu1 / (nu1 + nu2)") {
    CoxSimSpec spec;
    spec.beta = Eigen::Vector2d::Zero();
    const auto ds = gen_cox(spec, 100000, 5, false);
    double events = 0.0;
    for (const auto& rec : ds.records()) events += rec.a;
    CHECK(std::fabs(events / 1e5 - spec.nu1 / (spec.nu1 + spec.nu2)) < 0.01);
  }

  TEST_CASE("covariate law") {
    CoxSimSpec spec;
    spec.corr = 0.0;
    const auto j = spec.joint();
    CHECK(j[3] == doctest::Approx(spec.p1 * spec.p2));
    spec.p1 = 0.1;
    spec.p2 = 0.9;
    spec.corr = 0.9;
    CHECK_THROWS_AS(spec.validate(), ConfigurationError);
  }

  TEST_CASE("simulation settings round-trip through key = value text") {
    CoxSimSpec spec;
    spec.nu2 = 1.5;
    spec.odds10(2) = 0.25;
    std::stringstream ss;
    spec.write(ss);
    const auto back = CoxSimSpec::from_key_values(read_key_values(ss));
    CHECK(back.nu2 == 1.5);
    CHECK(back.odds10 == spec.odds10);
    CHECK(back.beta == spec.beta);

    const auto bt = BinaryTreatSimSpec::standard();
    std::stringstream s2;
    bt.write(s2);
    const auto bt2 = BinaryTreatSimSpec::from_key_values(read_key_values(s2));
    REQUIRE(bt2.cells.size() == bt.cells.size());
    for (const auto& [k, c] : bt.cells) {
      CHECK(bt2.cells.at(k).prob == c.prob);
      CHECK(bt2.cells.at(k).mean == c.mean);
    }
  }

  TEST_CASE("binary-treatment simulation") {
    const auto spec = BinaryTreatSimSpec::standard();
    CHECK(spec.cells.size() == 16);
    double total = 0.0;
    for (const auto& [k, c] : spec.cells) total += c.prob;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(spec.ccmv_gap() < 1e-12);
    CHECK(spec.cells.at({3U, 1, 1}).mean == Eigen::Vector2d(2.0, 2.0));

    const auto ds = gen_binary_treat(spec, 100000, 6, false);
    double f1100 = 0.0;
    Eigen::Vector2d m = Eigen::Vector2d::Zero();
    double n11 = 0.0;
    const auto masked = gen_binary_treat(spec, 100000, 6);
    for (std::size_t i = 0; i < masked.size(); ++i) {
      const auto& rec = masked[i];
      if (rec.mask.bits() == 3U && rec.w(0) == 0.0 && rec.a == 0) f1100 += 1e-5;
      if (rec.mask.bits() == 3U && rec.w(0) == 1.0 && rec.a == 1) {
        m += rec.x;
        n11 += 1.0;
      }
      CHECK(ds[i].mask.is_full());
    }
    CHECK(std::fabs(f1100 - 1.0 / 16) < 0.005);
    CHECK((m / n11 - Eigen::Vector2d(2.0, 2.0)).cwiseAbs().maxCoeff() < 0.05);
  }

  TEST_CASE("closed-form nuisances and the true effect") {
    const auto spec = BinaryTreatSimSpec::standard();
    const Eigen::Vector2d x(2.0, 2.5);
    CHECK(spec.propensity(x) > 0.0);
    CHECK(spec.propensity(x) < 1.0);
    CHECK(spec.density(x) > 0.0);
    const double t1 = true_ate_mc(spec, 200000, 3);
    CHECK(t1 == true_ate_mc(spec, 200000, 3));
    CHECK(std::fabs(t1 - 0.0148) < 0.01);
  }

  TEST_CASE("hazard ratios from cell hazards") {
    const std::array<double, 4> g = {1.0, std::exp(-0.5), std::exp(2.0), std::exp(1.5)};
    const auto b = beta_from_gamma(g);
    CHECK(b(0) == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(b(1) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS(beta_from_gamma({1.0, 0.0, 1.0, 1.0}), DomainError);
  }

  TEST_CASE("EM on complete data stops at the closed-form rates") {
    const auto ds = gen_cox(CoxSimSpec{}, 3000, 8, false);
    const auto odds = OddsModelSet::fit(ds);
    const auto fit = fit_transformed_mle(ds, odds);
    CHECK(fit.converged);
    CHECK(fit.iterations <= 2);
    double events[4] = {0, 0, 0, 0}, expo[4] = {0, 0, 0, 0}, cens = 0.0, total = 0.0;
    for (const auto& rec : ds.records()) {
      const int b = static_cast<int>(rec.x(0)) + 2 * static_cast<int>(rec.x(1));
      events[b] += rec.a;
      expo[b] += rec.w(0);
      cens += 1 - rec.a;
      total += rec.w(0);
    }
    for (int b = 0; b < 4; ++b) CHECK(fit.gamma[b] == doctest::Approx(events[b] / expo[b]).epsilon(1e-8));
    CHECK(fit.nu2 == doctest::Approx(cens / total).epsilon(1e-8));
    CHECK((fit.beta - CoxSimSpec{}.beta).cwiseAbs().maxCoeff() < 0.25);
  }

  TEST_CASE("a cell with no events has no finite log-ratio") {
    // In this draw the complete cases with x = 10 are all censored.
    const auto ds = gen_cox(CoxSimSpec{}, 350, substream_seed(20240611 + 350, 31));
    int events10 = 0;
    for (const auto& rec : ds.records())
      if (rec.mask.is_full() && rec.x(0) == 1.0 && rec.x(1) == 0.0) events10 += rec.a;
    REQUIRE(events10 == 0);
    CHECK_THROWS_AS(fit_transformed_mle(ds, OddsModelSet::fit(ds)), DegenerateError);
  }
}
