#include "mstage/datamodel.hpp"

#include "mstage/errors.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace mstage {

PatternMask::PatternMask(std::uint32_t bits, int dim) : bits_(bits), dim_(dim) {
  if (dim < 0 || dim > 31) throw PreconditionError("pattern dimension must be in [0, 31]");
  if ((bits & ~full_bits(dim)) != 0U) throw PreconditionError("pattern bits exceed dimension");
}

PatternMask PatternMask::full(int dim) { return PatternMask(full_bits(dim), dim); }

PatternMask PatternMask::from_string(const std::string& s) {
  std::uint32_t bits = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s[j] == '1')
      bits |= 1U << j;
    else if (s[j] != '0')
      throw ParseError("pattern string must contain only 0 and 1: " + s);
  }
  return PatternMask(bits, static_cast<int>(s.size()));
}

int PatternMask::count() const { return std::popcount(bits_); }

std::vector<int> PatternMask::observed() const {
  std::vector<int> out;
  for (int j = 0; j < dim_; ++j)
    if (test(j)) out.push_back(j);
  return out;
}

std::vector<int> PatternMask::missing() const {
  std::vector<int> out;
  for (int j = 0; j < dim_; ++j)
    if (!test(j)) out.push_back(j);
  return out;
}

std::string PatternMask::to_string() const {
  std::string s(static_cast<std::size_t>(dim_), '0');
  for (int j = 0; j < dim_; ++j)
    if (test(j)) s[static_cast<std::size_t>(j)] = '1';
  return s;
}

// ---------------------------------------------------------------------------

const std::vector<int>& Schema::outcomes_for(int a) const {
  auto it = observed_outcomes.find(a);
  if (it == observed_outcomes.end())
    throw SchemaError("outcome pattern " + std::to_string(a) + " is not in the schema alphabet");
  return it->second;
}

std::vector<int> Schema::alphabet() const {
  std::vector<int> out;
  for (const auto& [a, _] : observed_outcomes) out.push_back(a);
  return out;
}

Schema Schema::survival(std::vector<std::string> covariates, std::string time,
                        std::string status) {
  Schema s;
  s.kind = SchemaKind::survival;
  s.covariates = std::move(covariates);
  s.outcomes = {std::move(time)};
  s.pattern_column = std::move(status);
  s.observed_outcomes = {{0, {0}}, {1, {0}}};
  return s;
}

Schema Schema::treatment(std::vector<std::string> covariates, std::string outcome,
                         std::string treat) {
  Schema s;
  s.kind = SchemaKind::treatment;
  s.covariates = std::move(covariates);
  s.outcomes = {std::move(outcome)};
  s.pattern_column = std::move(treat);
  s.observed_outcomes = {{0, {0}}, {1, {0}}};
  return s;
}

Schema Schema::missing_response(std::vector<std::string> covariates, std::string outcome,
                                std::string respond) {
  Schema s;
  s.kind = SchemaKind::missing_response;
  s.covariates = std::move(covariates);
  s.outcomes = {std::move(outcome)};
  s.pattern_column = std::move(respond);
  s.observed_outcomes = {{0, {}}, {1, {0}}};
  return s;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Schema parse_schema_flag(const std::string& flag) {
  std::vector<std::string> covs;
  std::string time, status, outcome, treat, respond, weight;
  std::istringstream in(flag);
  std::string token;
  while (in >> token) {
    const auto colon = token.rfind(':');
    if (colon == std::string::npos) throw SchemaError("schema token lacks a role: " + token);
    const std::string names = token.substr(0, colon);
    const std::string role = token.substr(colon + 1);
    auto single = [&](std::string& slot) {
      if (names.find(',') != std::string::npos)
        throw SchemaError("role " + role + " takes a single column");
      if (!slot.empty()) throw SchemaError("role " + role + " given twice");
      slot = names;
    };
    if (role == "cov") {
      for (auto& n : split(names, ','))
        if (!n.empty()) covs.push_back(n);
    } else if (role == "time") {
      single(time);
    } else if (role == "status") {
      single(status);
    } else if (role == "outcome") {
      single(outcome);
    } else if (role == "treat") {
      single(treat);
    } else if (role == "respond") {
      single(respond);
    } else if (role == "weight") {
      single(weight);
    } else {
      throw SchemaError("unknown schema role: " + role);
    }
  }
  if (covs.empty()) throw SchemaError("schema names no covariate columns");
  Schema s;
  if (!time.empty() || !status.empty()) {
    if (time.empty() || status.empty() || !outcome.empty() || !treat.empty() || !respond.empty())
      throw SchemaError("survival schema needs exactly one time and one status column");
    s = Schema::survival(covs, time, status);
  } else if (!treat.empty()) {
    if (outcome.empty() || !respond.empty())
      throw SchemaError("treatment schema needs one outcome and one treat column");
    s = Schema::treatment(covs, outcome, treat);
  } else if (!respond.empty()) {
    if (outcome.empty()) throw SchemaError("missing-response schema needs an outcome column");
    s = Schema::missing_response(covs, outcome, respond);
  } else {
    throw SchemaError("schema needs time/status, outcome/treat or outcome/respond roles");
  }
  s.weight_column = weight;
  return s;
}

// ---------------------------------------------------------------------------

MissingDataset::MissingDataset(Schema schema, std::vector<ObservedRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  if (records_.empty()) throw ValidationError("dataset is empty");
  const int d = schema_.dim();
  if (d < 1) throw SchemaError("dataset needs at least one covariate");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto& rec = records_[i];
    if (rec.x.size() != d || rec.mask.dim() != d)
      throw ValidationError("record " + std::to_string(i) + " has wrong covariate dimension");
    for (int j = 0; j < d; ++j) {
      const bool present = !std::isnan(rec.x(j));
      if (present != rec.mask.test(j))
        throw ValidationError("record " + std::to_string(i) + ": mask disagrees with NA positions");
    }
    if (rec.w.size() != schema_.outcome_dim(rec.a))
      throw ValidationError("record " + std::to_string(i) + " has wrong outcome dimension");
    if (!(rec.weight >= 0.0) || !std::isfinite(rec.weight))
      throw ValidationError("record " + std::to_string(i) + " has an invalid case weight");
    index_[{rec.mask.bits(), rec.a}].push_back(i);
  }
  const std::uint32_t full = PatternMask::full_bits(d);
  for (int a : outcome_patterns()) {
    if (!index_.contains({full, a}))
      throw ValidationError("no complete-case record for outcome pattern a=" + std::to_string(a));
  }
}

const std::vector<std::size_t>& MissingDataset::cell(PatternMask mask, int a) const {
  static const std::vector<std::size_t> empty;
  auto it = index_.find({mask.bits(), a});
  return it == index_.end() ? empty : it->second;
}

std::vector<int> MissingDataset::outcome_patterns() const {
  std::set<int> s;
  for (const auto& [key, _] : index_) s.insert(key.second);
  return {s.begin(), s.end()};
}

std::vector<PatternMask> MissingDataset::patterns() const {
  std::set<std::uint32_t> s;
  for (const auto& [key, _] : index_) s.insert(key.first);
  std::vector<PatternMask> out;
  for (auto b : s) out.emplace_back(b, dim());
  return out;
}

bool MissingDataset::fully_observed() const {
  const std::uint32_t full = PatternMask::full_bits(dim());
  return std::all_of(index_.begin(), index_.end(),
                     [full](const auto& kv) { return kv.first.first == full; });
}

bool MissingDataset::binary_covariates() const {
  for (const auto& rec : records_)
    for (int j = 0; j < rec.x.size(); ++j)
      if (rec.mask.test(j) && rec.x(j) != 0.0 && rec.x(j) != 1.0) return false;
  return true;
}

double MissingDataset::total_weight() const {
  double s = 0.0;
  for (const auto& rec : records_) s += rec.weight;
  return s;
}

MissingDataset MissingDataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<ObservedRecord> recs;
  recs.reserve(indices.size());
  for (auto i : indices) recs.push_back(records_.at(i));
  return MissingDataset(schema_, std::move(recs));
}

std::vector<PatternCell> pattern_cells(const MissingDataset& ds) {
  std::vector<PatternCell> out;
  for (const auto& [key, idx] : ds.pattern_index()) {
    PatternCell c;
    c.mask = PatternMask(key.first, ds.dim());
    c.a = key.second;
    c.count = static_cast<long>(idx.size());
    for (auto i : idx) c.weight += ds[i].weight;
    out.push_back(c);
  }
  return out;  // std::map order is (mask, a) ascending
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& token, long row) {
  double v = 0.0;
  const char* b = token.data();
  const char* e = b + token.size();
  if (!token.empty() && *b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || token.empty())
    throw ParseError("cannot parse number '" + token + "'", row);
  return v;
}

MissingDataset read_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("dataset is empty (no header row)");
  std::vector<std::string> header = split(line, ',');
  for (auto& h : header) h = trim(h);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("column '" + name + "' not found in header");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));
  std::vector<std::size_t> out_cols;
  for (const auto& c : schema.outcomes) out_cols.push_back(column(c));
  const std::size_t pat_col = column(schema.pattern_column);
  const bool has_weight = !schema.weight_column.empty();
  const std::size_t w_col = has_weight ? column(schema.weight_column) : 0;
  const int d = schema.dim();

  std::vector<ObservedRecord> recs;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(f.size()),
                       row);
    for (auto& t : f) t = trim(t);
    ObservedRecord rec;
    rec.x.resize(d);
    std::uint32_t bits = 0;
    for (int j = 0; j < d; ++j) {
      const auto& t = f[cov_cols[static_cast<std::size_t>(j)]];
      if (t == "NA") {
        rec.x(j) = std::numeric_limits<double>::quiet_NaN();
      } else {
        rec.x(j) = parse_double(t, row);
        if (!std::isfinite(rec.x(j))) throw ParseError("non-finite covariate value", row);
        bits |= 1U << j;
      }
    }
    rec.mask = PatternMask(bits, d);
    const double av = parse_double(f[pat_col], row);
    if (av != std::floor(av) || av < 0)
      throw ParseError("outcome pattern must be a nonnegative integer", row);
    rec.a = static_cast<int>(av);
    const auto& obs = schema.outcomes_for(rec.a);
    rec.w.resize(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < out_cols.size(); ++k) {
      const auto& t = f[out_cols[k]];
      const auto pos = std::find(obs.begin(), obs.end(), static_cast<int>(k));
      if (pos == obs.end()) continue;  // unobserved under this pattern; any token accepted
      if (t == "NA")
        throw SchemaError("row " + std::to_string(row) + ": NA in outcome column '" +
                          schema.outcomes[k] + "'");
      rec.w(pos - obs.begin()) = parse_double(t, row);
    }
    if (has_weight) rec.weight = parse_double(f[w_col], row);
    recs.push_back(std::move(rec));
  }
  return MissingDataset(schema, std::move(recs));
}

MissingDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file " + path);
  return read_csv(in, schema);
}

void write_csv(std::ostream& out, const MissingDataset& ds) {
  const Schema& s = ds.schema();
  bool weighted = !s.weight_column.empty();
  for (const auto& rec : ds.records())
    if (rec.weight != 1.0) weighted = true;
  const std::string wname = s.weight_column.empty() ? "weight" : s.weight_column;
  for (const auto& c : s.covariates) out << c << ',';
  for (const auto& c : s.outcomes) out << c << ',';
  out << s.pattern_column;
  if (weighted) out << ',' << wname;
  out << '\n';
  for (const auto& rec : ds.records()) {
    for (int j = 0; j < ds.dim(); ++j) out << format_double(rec.x(j)) << ',';
    const auto& obs = s.outcomes_for(rec.a);
    for (std::size_t k = 0; k < s.outcomes.size(); ++k) {
      const auto pos = std::find(obs.begin(), obs.end(), static_cast<int>(k));
      out << (pos == obs.end() ? std::string("NA") : format_double(rec.w(pos - obs.begin())))
          << ',';
    }
    out << rec.a;
    if (weighted) out << ',' << format_double(rec.weight);
    out << '\n';
  }
}

void write_csv(const std::string& path, const MissingDataset& ds) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for writing: " + path);
  write_csv(out, ds);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd OdfSpec::evaluate(int a, const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
  auto it = by_pattern.find(a);
  if (it == by_pattern.end())
    throw PreconditionError("no ODF component for outcome pattern " + std::to_string(a));
  Eigen::VectorXd v = it->second(x, w);
  if (v.size() != output_dim) throw PreconditionError("ODF component has wrong output dimension");
  return v;
}

OdfSpec OdfSpec::uniform(const std::vector<int>& alphabet, int output_dim, OdfFunction f) {
  OdfSpec s;
  s.output_dim = output_dim;
  for (int a : alphabet) s.by_pattern[a] = f;
  return s;
}

}  // namespace mstage
