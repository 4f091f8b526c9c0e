#include <doctest.h>

#include "mstage/datamodel.hpp"
#include "mstage/errors.hpp"
#include "mstage/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace mstage;

namespace {

MissingDataset parse(const std::string& text, const Schema& schema) {
  std::istringstream in(text);
  return read_csv(in, schema);
}

const Schema kSurvival = Schema::survival({"x1", "x2"});

}  // namespace

TEST_SUITE("datamodel") {
  TEST_CASE("pattern masks are little-endian with x1 printed first") {
    const auto r = PatternMask::from_string("10");
    CHECK(r.bits() == 1U);
    CHECK(r.test(0));
    CHECK_FALSE(r.test(1));
    CHECK(r.to_string() == "10");
    CHECK(r.complement().to_string() == "01");
    CHECK(r.complement().complement() == r);
    CHECK(PatternMask::full(3).is_full());
    CHECK(PatternMask::full(3).to_string() == "111");
    CHECK(r.observed() == std::vector<int>{0});
    CHECK(r.missing() == std::vector<int>{1});
    CHECK_THROWS_AS(PatternMask(4U, 2), PreconditionError);
    CHECK_THROWS_AS(PatternMask::from_string("1x"), ParseError);
  }

  TEST_CASE("NA cells become masks") {
    const auto ds = parse("x1,x2,y,delta\n1,0,0.5,1\n0,NA,1.5,0\n1,1,0.2,0\n", kSurvival);
    REQUIRE(ds.size() == 3);
    CHECK(ds[0].mask.to_string() == "11");
    CHECK(ds[1].mask.to_string() == "10");
    CHECK(ds[2].mask.to_string() == "11");
    CHECK(std::isnan(ds[1].x(1)));
    CHECK(ds[1].a == 0);
    CHECK(ds[1].w.size() == 1);
    CHECK(ds[1].w(0) == doctest::Approx(1.5));
    CHECK(ds.schema().outcome_dim(0) == 1);
    CHECK(ds.schema().outcome_dim(1) == 1);
  }

  TEST_CASE("reader errors") {
    CHECK_THROWS_AS(parse("x1,x2,y,delta\n", kSurvival), ValidationError);
    CHECK_THROWS_AS(parse("", kSurvival), ValidationError);
    try {
      parse("x1,x2,y,delta\n1,0,0.5,1\n1,0,0.5\n", kSurvival);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.row() == 2);
    }
    CHECK_THROWS_AS(parse("x1,x2,y,delta\n1,0,NA,1\n", kSurvival), SchemaError);
    // No complete case with delta = 0.
    CHECK_THROWS_AS(parse("x1,x2,y,delta\n1,0,0.5,1\nNA,0,0.7,0\n", kSurvival), ValidationError);
    CHECK_THROWS_AS(parse("x1,x3,y,delta\n1,0,0.5,1\n", kSurvival), SchemaError);
  }

  TEST_CASE("write then read reproduces the file") {
    const std::string text = "x1,x2,y,delta\n1,0,0.5,1\n0,NA,1.25,0\nNA,1,3,1\n1,1,0.125,0\n";
    const auto ds = parse(text, kSurvival);
    std::ostringstream out;
    write_csv(out, ds);
    CHECK(out.str() == text);
    const auto again = parse(out.str(), kSurvival);
    REQUIRE(again.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(again[i].mask == ds[i].mask);
      CHECK(again[i].a == ds[i].a);
      CHECK(again[i].w == ds[i].w);
    }
  }

  TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125, 0.0}) CHECK(parse_double(format_double(v)) == v);
    CHECK_THROWS_AS(parse_double("abc", 4), ParseError);
  }

  TEST_CASE("schema flags") {
    const auto s = parse_schema_flag("a,b,c:cov t:time d:status");
    CHECK(s.kind == SchemaKind::survival);
    CHECK(s.dim() == 3);
    CHECK(s.pattern_column == "d");
    const auto t = parse_schema_flag("x1,x2:cov y:outcome a:treat");
    CHECK(t.kind == SchemaKind::treatment);
    CHECK(t.outcomes_for(0).size() == 1);
    const auto m = parse_schema_flag("x1:cov y:outcome r:respond");
    CHECK(m.kind == SchemaKind::missing_response);
    CHECK(m.outcomes_for(0).empty());
    CHECK(m.outcomes_for(1).size() == 1);
    CHECK_THROWS_AS(parse_schema_flag("x1:cov y:weird"), SchemaError);
    CHECK_THROWS_AS(parse_schema_flag("y:time d:status"), SchemaError);
  }

  TEST_CASE("pattern cells partition the records in a fixed order") {
    const auto ds = gen_cox(CoxSimSpec{}, 1000, 3);
    const auto cells = pattern_cells(ds);
    long total = 0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      total += cells[k].count;
      if (k > 0) {
        const auto prev = std::make_pair(cells[k - 1].mask.bits(), cells[k - 1].a);
        CHECK(prev < std::make_pair(cells[k].mask.bits(), cells[k].a));
      }
    }
    CHECK(total == 1000);
    std::vector<bool> seen(ds.size(), false);
    for (const auto& [key, idx] : ds.pattern_index())
      for (auto i : idx) {
        CHECK_FALSE(seen[i]);
        seen[i] = true;
        CHECK(ds[i].mask.bits() == key.first);
        CHECK(ds[i].a == key.second);
      }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

    // Pattern shares near 40/30/30 for 01/10/11.
    double share[4] = {0, 0, 0, 0};
    for (const auto& c : cells) share[c.mask.bits()] += c.count / 1000.0;
    CHECK(std::fabs(share[2] - 0.40) < 0.05);
    CHECK(std::fabs(share[1] - 0.30) < 0.05);
    CHECK(std::fabs(share[3] - 0.30) < 0.05);

    // Counts do not depend on record order.
    std::vector<std::size_t> perm(ds.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), std::mt19937(5));
    const auto cells2 = pattern_cells(ds.subset(perm));
    REQUIRE(cells2.size() == cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) CHECK(cells2[k].count == cells[k].count);
  }

  TEST_CASE("complete data gives one cell per outcome pattern") {
    const auto ds = gen_cox(CoxSimSpec{}, 400, 9, false);
    const auto cells = pattern_cells(ds);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].mask.is_full());
    CHECK(cells[0].count + cells[1].count == 400);
    CHECK(ds.fully_observed());
  }

  TEST_CASE("binary-treatment data has 16 cells with the listed pattern margins") {
    const auto ds = gen_binary_treat(BinaryTreatSimSpec::standard(), 20000, 4);
    const auto cells = pattern_cells(ds);
    CHECK(cells.size() == 8);  // (mask, a); Y lives in the outcome
    std::map<std::tuple<std::uint32_t, int, int>, double> freq;
    for (const auto& rec : ds.records())
      freq[{rec.mask.bits(), static_cast<int>(rec.w(0)), rec.a}] += 1.0 / 20000.0;
    CHECK(freq.size() == 16);
    double p11 = 0.0;
    for (const auto& [k, f] : freq)
      if (std::get<0>(k) == 3U) p11 += f;
    const double expect11 = 1.0 / 16 + 1.0 / 12 + 1.0 / 16 + 1.0 / 24;
    CHECK(std::fabs(p11 - expect11) < 4.0 * std::sqrt(expect11 * (1 - expect11) / 20000.0));
  }

  TEST_CASE("ODF evaluation") {
    const auto f = OdfSpec::uniform({0, 1}, 1, [](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      return Eigen::VectorXd::Constant(1, x.sum() + w(0));
    });
    Eigen::VectorXd x(2), w(1);
    x << 1, 2;
    w << 0.5;
    CHECK(f.evaluate(0, x, w)(0) == 3.5);
    CHECK(f.evaluate(1, x, w)(0) == f.evaluate(1, x, w)(0));
    CHECK_THROWS_AS(f.evaluate(2, x, w), PreconditionError);
  }
}
