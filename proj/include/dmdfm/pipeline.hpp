#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmdfm/factor.hpp"
#include "dmdfm/gmm.hpp"
#include "dmdfm/panel.hpp"

namespace dmdfm {

enum class GmmSteps { one, two };
enum class GForecastRule { hold, ar1 };

/// Every free choice of the estimation procedure in one place.
struct DmdfmConfig {
  double variance_threshold = 0.8;
  int kmax_r = 4;
  int kmax_s = 4;
  SelectionCriterion s_criterion = SelectionCriterion::pcp1;
  GmmSteps gmm_steps = GmmSteps::two;
  std::optional<int> max_lag_depth;  // unset -> unbounded for T <= 8, else 4
  int max_outer_iterations = 20;
  double convergence_tol = 1e-6;
  // The outer loop is flagged NonConvergence only when the last coefficient
  // update still exceeds this (the absorption walk settles geometrically and
  // rarely reaches convergence_tol within the budget).
  double stability_tol = 0.05;
  bool pooled_r_selection = false;
  bool contemporaneous_f_only = false;
  bool identity_u = false;
  bool include_lag = true;                // false drops the response lag term
  std::optional<int> force_r, force_s;    // bypass factor-count selection
  GForecastRule g_forecast = GForecastRule::hold;

  void validate() const;
};

struct FitDiagnostics {
  SelectionReport r_report;
  SelectionReport s_report;
  // Interactive-model misfit ||u_hat - Gamma G'||^2 per outer iteration.
  std::vector<double> objective_trace;
  int iterations = 0;
  double final_delta = 0.0;  // last coefficient change
  bool converged = false;
  bool weight_regularized = false;
};

/// Full estimation result. fitted/residuals are N x T with column 0 (the
/// base period, which has no lag) set to NaN; interactive_term bundles the
/// per-individual level recovered by the error-factor centering with the
/// time-factor product.
struct DmdfmFit {
  int n_individuals = 0;
  int n_periods = 0;
  DmdfmConfig config;
  FactorDecomposition regressor_factors;  // loadings p x r, scores stacked (N*T) x r
  PanelTensor f_scores;                   // N x T x r view of the stacked scores
  FactorDecomposition error_factors;      // loadings N x s (individuals), scores (T-1) x s
  double beta_l = 0.0;
  Vector beta_f;
  Matrix interactive_term;  // N x T, column 0 = NaN
  Matrix fitted;            // N x T, column 0 = NaN
  Matrix residuals;         // N x T, column 0 = NaN
  GmmEstimate gmm;          // final-iteration estimate
  long moment_count = 0;
  FitDiagnostics diagnostics;

  int r() const { return regressor_factors.k; }
  int s() const { return error_factors.k; }
  std::string to_json() const;
};

/// Four-step procedure: PCA on the regressors, difference GMM, PCA on the
/// first-stage residuals, GMM with the differenced interactive term absorbed;
/// the last two stages iterate to a coefficient fixed point. Factor counts
/// are selected once on the first pass and frozen. Never throws on
/// non-convergence: the last iterate is returned flagged.
DmdfmFit estimate(const PanelDataset& data, const DmdfmConfig& config = {});

struct ForecastOptions {
  /// Use observed responses from `data` as the lag at every origin (rolling
  /// one-step evaluation) instead of feeding predictions back recursively.
  bool roll_with_observed = false;
};

/// h-step-ahead predictions, one column per step. `data` must extend the
/// training panel with regressor rows for the forecast periods; error
/// factors are held at their last estimated value (or AR(1)-extrapolated
/// per config).
Matrix forecast(const DmdfmFit& fit, const PanelDataset& data, int horizon,
                const ForecastOptions& options = {});

struct IndividualDiagnostics {
  double mean = 0.0;
  double variance = 0.0;
  double autocorr1 = 0.0;
  bool mean_flag = false;
  bool autocorr_flag = false;
};

struct ResidualReport {
  std::vector<IndividualDiagnostics> individuals;
  int mean_flags = 0;
  int autocorr_flags = 0;
  std::string to_json() const;
};

/// Per-individual residual mean / variance / lag-1 autocorrelation, with
/// flags at z * sd / sqrt(T) for the mean and z / sqrt(T) for the
/// autocorrelation.
ResidualReport residual_diagnostics(const DmdfmFit& fit, double z = 2.0);

}  // namespace dmdfm
