#pragma once

#include "mstage/datamodel.hpp"
#include "mstage/imputation.hpp"
#include "mstage/odds.hpp"

namespace mstage {

// Sample versions of the three representations of E[f_a(X, W_a) 1(A=a) 1(R=r)]
// for one (r, a) cell. Averages use the record case weights, so a dataset
// whose records are the atoms of a discrete law (weights = probabilities)
// yields population values.

/// Inverse-odds form: mean of f_a(X, W_a) Q_{r,a}(X_r, W_a) 1(A=a) 1(R=1_d).
Eigen::VectorXd ipw_cell(const MissingDataset& ds, const OddsModelSet& odds, const OdfSpec& f,
                         PatternMask r, int a);

/// Regression form: mean of m_{r,a}(X_r, W_a) 1(A=a) 1(R=r), with m averaged
/// over the draws of each record in its own pattern.
Eigen::VectorXd ra_cell(const MissingDataset& ds, const ImputationDraws& draws, const OdfSpec& f,
                        PatternMask r, int a);

struct DrCellTerms {
  Eigen::VectorXd ipw;          // odds-weighted complete cases
  Eigen::VectorXd ra;           // regression function on pattern-r records
  Eigen::VectorXd augmentation; // regression function times odds on complete cases
  Eigen::VectorXd total() const { return ipw + ra - augmentation; }
};

/// Doubly robust form; `draws` must carry the pattern-r view of complete records.
DrCellTerms dr_cell_terms(const MissingDataset& ds, const OddsModelSet& odds,
                          const ImputationDraws& draws, const OdfSpec& f, PatternMask r, int a);

}  // namespace mstage
