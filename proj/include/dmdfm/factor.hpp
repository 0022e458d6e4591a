#pragma once

#include <string>
#include <vector>

#include "dmdfm/panel.hpp"
#include "dmdfm/types.hpp"

namespace dmdfm {

/// One principal-component pass over an m x d matrix.
///
/// Normalization: loadings' * loadings / d = I_k, with the inverse scale
/// absorbed into the scores, so
///   input = ones * col_means' + scores * loadings' + residuals
/// holds exactly. Eigenvalues are those of the column covariance C'C/m of the
/// centered input, in descending order; each loading column is signed so its
/// largest-magnitude entry is positive.
struct FactorDecomposition {
  int k = 0;
  Matrix loadings;    // d x k
  Matrix scores;      // m x k
  Vector col_means;   // d
  Vector eigenvalues; // min(m, d), descending
  Vector explained_share;
  Matrix residuals;   // m x d, relative to the centered input
};

FactorDecomposition pca(const Matrix& input, int k);

/// Least-squares projection of (centered) rows onto the loading columns —
/// regression-method factor scores. Applied to the training matrix this
/// reproduces the stored scores.
Matrix factor_scores(const FactorDecomposition& decomp, const Matrix& new_rows);

enum class SelectionCriterion { variance_contribution, scree, pcp1, icp1 };

std::string to_string(SelectionCriterion c);
SelectionCriterion selection_criterion_from_string(const std::string& s);

/// Factor-count selection trace. candidate_values[k] is the criterion value
/// at k factors, k = 0..kmax (k = 0 is included so "no factors" is a
/// representable choice; for the variance rules it is the trivial share 0).
struct SelectionReport {
  SelectionCriterion criterion = SelectionCriterion::variance_contribution;
  std::vector<double> candidate_values;
  int chosen_k = 0;

  std::string to_json() const;
};

/// Bai-Ng style panel criteria. v_k is the average squared residual
/// V(k, F^k) = N^{-1} sum_i e_i'e_i / T.
double pcp1(int k, double v_k, double sigma2_hat, int n, int t);
double icp1(int k, double v_k, int n, int t);

/// Number of regressor factors by cumulative variance contribution. Runs one
/// PCA per period slice (N x p) and unifies by taking, for each k, the worst
/// (minimum) cumulative share across periods; chosen_k is the smallest k
/// whose worst share reaches the threshold, equivalently the maximum over
/// periods of the per-period minimal k. `pooled` switches to a single PCA on
/// the stacked (N*T) x p matrix.
SelectionReport select_r_regressors(const PanelDataset& data, double threshold, int kmax,
                                    bool pooled = false);

/// Number of error-component factors by PCp1/ICp1 minimization over
/// k = 0..kmax on the N x T residual matrix. sigma2 for PCp1 comes from the
/// kmax-factor fit.
SelectionReport select_s_errors(const Matrix& residuals, int kmax, SelectionCriterion criterion);

}  // namespace dmdfm
