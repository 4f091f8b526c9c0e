#include "mstage/decompose.hpp"

#include "mstage/errors.hpp"

namespace mstage {

namespace {

Eigen::VectorXd average_over(const DrawSet& set, const OdfSpec& f, int a, const Eigen::VectorXd& w) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(f.output_dim);
  for (Eigen::Index c = 0; c < set.size(); ++c) m += set.prob(c) * f.evaluate(a, set.x.col(c), w);
  return m;
}

}  // namespace

Eigen::VectorXd ipw_cell(const MissingDataset& ds, const OddsModelSet& odds, const OdfSpec& f,
                         PatternMask r, int a) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(f.output_dim);
  for (auto i : ds.cell(PatternMask::full(ds.dim()), a)) {
    const auto& rec = ds[i];
    acc += rec.weight * odds.odds(r, a, rec.x, rec.w) * f.evaluate(a, rec.x, rec.w);
  }
  return acc / ds.total_weight();
}

Eigen::VectorXd ra_cell(const MissingDataset& ds, const ImputationDraws& draws, const OdfSpec& f,
                        PatternMask r, int a) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(f.output_dim);
  for (auto i : ds.cell(r, a)) acc += ds[i].weight * average_over(draws.own(i), f, a, ds[i].w);
  return acc / ds.total_weight();
}

DrCellTerms dr_cell_terms(const MissingDataset& ds, const OddsModelSet& odds,
                          const ImputationDraws& draws, const OdfSpec& f, PatternMask r, int a) {
  DrCellTerms t;
  t.ipw = ipw_cell(ds, odds, f, r, a);
  t.ra = ra_cell(ds, draws, f, r, a);
  if (r.is_full()) {
    t.augmentation = t.ipw;  // m_{1_d,a} = f_a and the odds are 1
    return t;
  }
  t.augmentation = Eigen::VectorXd::Zero(f.output_dim);
  for (auto i : ds.cell(PatternMask::full(ds.dim()), a)) {
    const auto& rec = ds[i];
    t.augmentation += rec.weight * odds.odds(r, a, rec.x, rec.w) *
                      average_over(draws.view(i, r), f, a, rec.w);
  }
  t.augmentation /= ds.total_weight();
  return t;
}

}  // namespace mstage
