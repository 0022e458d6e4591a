#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmdfm/panel.hpp"
#include "dmdfm/types.hpp"

namespace dmdfm {

/// Instrument construction knobs. When max_lag_depth is unset the default
/// rule applies: every available response lag for panels with at most 8
/// periods, the most recent 4 lags otherwise. contemporaneous_f_only swaps
/// the full factor-history block for the equation's own differenced factor
/// row. identity_u replaces the MA(1) pattern matrix in the one-step weight
/// with the identity.
struct InstrumentOptions {
  std::optional<int> max_lag_depth;
  bool contemporaneous_f_only = false;
  bool identity_u = false;
  bool include_lag = true;  // false drops the response-lag regressor (static model)
};

/// Differenced estimation problem. With P panel columns (column 0 being the
/// base period) there are P-2 usable differenced equations, at columns
/// c = 2..P-1. Equation c of individual i is instrumented by the block
///   H_ic = (y_i0, ..., y_i,c-2, f_i1', ..., f_i,P-1')'
/// and Z_i is block-diagonal in these H's. The uncollapsed moment count
/// equals Te(Te-1)/2 + r*Te*(Te-1) with Te = P-1 periods after the base.
struct GmmProblem {
  int n = 0;
  int n_periods = 0;  // P
  int r = 0;
  Matrix dy;      // N x (P-2), dy(i, c-2) = y(i, c) - y(i, c-1)
  Matrix dy_lag;  // N x (P-2)
  PanelTensor df; // N x (P-2) x r
  std::vector<std::vector<Vector>> blocks;  // blocks[i][e]: instrument column of equation e
  std::vector<int> block_rows;
  std::vector<int> block_offsets;
  long moment_count = 0;
  bool identity_u = false;
  bool include_lag = true;

  int n_equations() const { return n_periods - 2; }
  int q() const { return static_cast<int>(moment_count); }
  int n_params() const { return (include_lag ? 1 : 0) + r; }

  /// Dense q x (P-2) instrument matrix of one individual (test/oracle use).
  Matrix z_matrix(int i) const;
  /// (P-2) x (r+1) regressor matrix (dy_lag | df) of one individual.
  Matrix x_matrix(int i) const;
};

GmmProblem build_instruments(const PanelDataset& data, const PanelTensor& f_scores,
                             const InstrumentOptions& options = {});

struct WeightMatrix {
  Matrix w;                 // q x q, symmetric PSD
  bool regularized = false; // pseudo-inverse fallback was taken
};

/// One-step weight (N^{-1} sum_i Z_i U Z_i')^{-1} with U the first-difference
/// MA(1) pattern (2 on the diagonal, -1 off). Singular accumulations fall
/// back to the Moore-Penrose pseudo-inverse with a warning.
WeightMatrix one_step_weight(const GmmProblem& problem);

struct GmmEstimate {
  double rho_hat = 0.0;
  Vector beta_f_hat;
  Matrix residuals;  // N x (P-2), differenced
  Matrix weight_used;
  Matrix avar;  // (r+1) x (r+1)
  double objective_value = 0.0;
  long moment_count = 0;
  std::optional<double> first_step_objective;
  bool weight_regularized = false;
  bool second_step_degenerate = false;

  Vector coefficients() const;
  std::string to_json() const;
};

/// Closed-form GMM solve for the given weight. Throws RankDeficientDesign
/// (with the condition number) when the normal matrix is not invertible.
/// with_avar = false skips the variance evaluation (iterative callers fill it
/// on the final pass only).
GmmEstimate gmm_solve(const GmmProblem& problem, const WeightMatrix& weight,
                      bool with_avar = true);

/// One-step solve, residual-based optimal weight, re-solve. A degenerate
/// second-step weight (for instance, zero residuals) returns the first-step
/// estimate flagged instead of failing.
GmmEstimate two_step(const GmmProblem& problem);
GmmEstimate two_step(const GmmProblem& problem, const WeightMatrix& first_weight,
                     bool with_avar = true);

/// Sandwich variance evaluated at the estimate's weight, with the moment
/// covariance estimated as sigma2 * N^{-1} sum_i Z_i U Z_i' (homoskedastic
/// differenced errors) and sigma2 = ||residuals||^2 / (2 * count). At the
/// one-step optimal weight this collapses to sigma2 * N * (Sx' A Sx)^{-1}.
Matrix asymptotic_variance(const GmmEstimate& estimate, const GmmProblem& problem);

/// Value of the weighted moment objective g' A g, g = N^{-1} sum_i Z_i de_i,
/// at arbitrary coefficients.
double gmm_objective(const GmmProblem& problem, const Matrix& weight, double rho,
                     const Vector& beta_f);

}  // namespace dmdfm
