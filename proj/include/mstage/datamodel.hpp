#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mstage {

/// Which covariates are observed. Stored little-endian: bit j set means
/// covariate j is observed. The string form lists covariate 1 first, so
/// "10" means x1 observed and x2 missing.
class PatternMask {
 public:
  PatternMask() = default;
  PatternMask(std::uint32_t bits, int dim);
  static PatternMask full(int dim);
  static PatternMask from_string(const std::string& s);

  std::uint32_t bits() const { return bits_; }
  int dim() const { return dim_; }
  bool test(int j) const { return (bits_ >> j) & 1U; }
  bool is_full() const { return bits_ == full_bits(dim_); }
  int count() const;
  PatternMask complement() const { return PatternMask(full_bits(dim_) & ~bits_, dim_); }
  std::vector<int> observed() const;
  std::vector<int> missing() const;
  std::string to_string() const;

  auto operator<=>(const PatternMask&) const = default;

  static std::uint32_t full_bits(int dim) {
    return dim >= 32 ? 0xffffffffU : ((1U << dim) - 1U);
  }

 private:
  std::uint32_t bits_ = 0;
  int dim_ = 0;
};

/// One row of observed data: X_{R}, R, A and W_A. Missing covariates are
/// NaN in `x`; `w` holds only the outcomes observed under `a`.
struct ObservedRecord {
  Eigen::VectorXd x;
  PatternMask mask;
  int a = 0;
  Eigen::VectorXd w;
  double weight = 1.0;  // case weight; 1 for ordinary data
};

enum class SchemaKind { survival, treatment, missing_response };

/// Column roles of a dataset.
struct Schema {
  SchemaKind kind = SchemaKind::survival;
  std::vector<std::string> covariates;
  std::vector<std::string> outcomes;  // outcome columns (W components)
  std::string pattern_column;         // column holding A (delta, treatment, response)
  std::string weight_column;          // optional case-weight column
  std::map<int, std::vector<int>> observed_outcomes;  // a -> indices into `outcomes`

  int dim() const { return static_cast<int>(covariates.size()); }
  /// Indices of outcome columns observed under pattern a.
  const std::vector<int>& outcomes_for(int a) const;
  int outcome_dim(int a) const { return static_cast<int>(outcomes_for(a).size()); }
  std::vector<int> alphabet() const;

  static Schema survival(std::vector<std::string> covariates, std::string time = "y",
                         std::string status = "delta");
  static Schema treatment(std::vector<std::string> covariates, std::string outcome = "y",
                          std::string treat = "a");
  static Schema missing_response(std::vector<std::string> covariates, std::string outcome = "y",
                                 std::string respond = "a");
};

/// Parses flags such as "x1,x2:cov y:time delta:status" or
/// "x1,x2:cov y:outcome a:treat". Roles: cov, time, status, outcome, treat,
/// respond, weight.
Schema parse_schema_flag(const std::string& flag);

struct PatternCell {
  PatternMask mask;
  int a = 0;
  long count = 0;
  double weight = 0.0;
};

/// Immutable collection of observed records with a pattern index.
class MissingDataset {
 public:
  using CellKey = std::pair<std::uint32_t, int>;  // (mask bits, a)

  MissingDataset() = default;
  /// Validates record shapes and that complete cases exist for every
  /// occurring outcome pattern.
  MissingDataset(Schema schema, std::vector<ObservedRecord> records);

  const Schema& schema() const { return schema_; }
  std::size_t size() const { return records_.size(); }
  int dim() const { return schema_.dim(); }
  const std::vector<ObservedRecord>& records() const { return records_; }
  const ObservedRecord& operator[](std::size_t i) const { return records_[i]; }

  const std::map<CellKey, std::vector<std::size_t>>& pattern_index() const { return index_; }
  const std::vector<std::size_t>& cell(PatternMask mask, int a) const;
  std::vector<int> outcome_patterns() const;
  std::vector<PatternMask> patterns() const;  // occurring masks, ascending
  bool fully_observed() const;
  bool binary_covariates() const;
  double total_weight() const;

  /// New dataset built from the given record indices (repeats allowed).
  MissingDataset subset(const std::vector<std::size_t>& indices) const;

 private:
  Schema schema_;
  std::vector<ObservedRecord> records_;
  std::map<CellKey, std::vector<std::size_t>> index_;
};

std::vector<PatternCell> pattern_cells(const MissingDataset& ds);

MissingDataset read_csv(std::istream& in, const Schema& schema);
MissingDataset load_csv(const std::string& path, const Schema& schema);
void write_csv(std::ostream& out, const MissingDataset& ds);
void write_csv(const std::string& path, const MissingDataset& ds);

/// Shortest round-trip decimal representation.
std::string format_double(double v);
double parse_double(const std::string& token, long row = -1);

/// Observed-decomposable function h = sum_a f_a(x, w_a) 1(A = a).
using OdfFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& w)>;

struct OdfSpec {
  int output_dim = 1;
  std::map<int, OdfFunction> by_pattern;

  Eigen::VectorXd evaluate(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w) const;
  /// The same scalar function for every pattern.
  static OdfSpec uniform(const std::vector<int>& alphabet, int output_dim, OdfFunction f);
};

}  // namespace mstage
