#include "dmdfm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dmdfm/errors.hpp"

namespace dmdfm {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Levels residual u_hat for columns 1..T-1: y - rho*y_lag - F*beta.
Matrix levels_residual(const PanelDataset& data, const PanelTensor& f, double rho,
                       const Vector& beta_f, bool include_lag) {
  const int n = data.n_individuals;
  const int t = data.n_periods;
  Matrix u(n, t - 1);
  for (int i = 0; i < n; ++i) {
    for (int c = 1; c < t; ++c) {
      double v = data.y(i, c);
      if (include_lag) v -= rho * data.y(i, c - 1);
      for (int j = 0; j < f.k; ++j) v -= f.at(i, c, j) * beta_f[j];
      u(i, c - 1) = v;
    }
  }
  return u;
}

/// dy with the differenced interactive term removed. Error-factor scores are
/// indexed by residual column (period c maps to score row c-1).
Matrix absorb_interactive(const Matrix& dy, const FactorDecomposition& edec) {
  Matrix out = dy;
  if (edec.k == 0) return out;
  const Matrix& g = edec.scores;    // (T-1) x s
  const Matrix& gam = edec.loadings;  // N x s
  for (int i = 0; i < out.rows(); ++i)
    for (int e = 0; e < out.cols(); ++e) {
      const int c = e + 2;
      out(i, e) -= (g.row(c - 1) - g.row(c - 2)).dot(gam.row(i));
    }
  return out;
}

// The one-step weight depends only on the instruments, so outer iterations
// reuse it; the variance is evaluated on the final pass only.
GmmEstimate solve_step(const GmmProblem& problem, const WeightMatrix& w1, GmmSteps steps,
                       bool with_avar) {
  if (steps == GmmSteps::one) return gmm_solve(problem, w1, with_avar);
  return two_step(problem, w1, with_avar);
}

SelectionReport forced_report(SelectionCriterion criterion, int k) {
  SelectionReport rep;
  rep.criterion = criterion;
  rep.chosen_k = k;
  return rep;
}

ordered_json report_json(const SelectionReport& rep) {
  ordered_json j;
  j["criterion"] = to_string(rep.criterion);
  j["candidates"] = rep.candidate_values;
  j["chosen_k"] = rep.chosen_k;
  return j;
}

}  // namespace

void DmdfmConfig::validate() const {
  if (variance_threshold <= 0.0 || variance_threshold > 1.0)
    throw DataError("BadConfig", "variance_threshold must lie in (0, 1]");
  if (convergence_tol <= 0.0) throw DataError("BadConfig", "convergence_tol must be positive");
  if (stability_tol < convergence_tol)
    throw DataError("BadConfig", "stability_tol must not be below convergence_tol");
  if (max_outer_iterations < 1)
    throw DataError("BadConfig", "max_outer_iterations must be at least 1");
  if (kmax_r < 0 || kmax_s < 0) throw DataError("BadConfig", "kmax must be nonnegative");
}

DmdfmFit estimate(const PanelDataset& data, const DmdfmConfig& config) {
  config.validate();
  const int n = data.n_individuals;
  const int t = data.n_periods;
  const int p = data.n_regressors;
  if (t < 4)
    throw too_few_periods("the estimation pipeline needs T >= 4, got " + std::to_string(t));

  DmdfmFit fit;
  fit.n_individuals = n;
  fit.n_periods = t;
  fit.config = config;

  // Step 1: regressor factors.
  int r;
  if (config.force_r) {
    r = std::min({*config.force_r, n, p});
    fit.diagnostics.r_report = forced_report(SelectionCriterion::variance_contribution, r);
  } else {
    const int kmax_r = std::min({config.kmax_r, n, p});
    fit.diagnostics.r_report =
        select_r_regressors(data, config.variance_threshold, kmax_r, config.pooled_r_selection);
    r = fit.diagnostics.r_report.chosen_k;
  }
  fit.regressor_factors = pca(data.stacked_regressors(), r);
  fit.f_scores = PanelTensor(n, t, r);
  fit.f_scores.flat = fit.regressor_factors.scores;

  InstrumentOptions iopts;
  iopts.max_lag_depth = config.max_lag_depth;
  iopts.contemporaneous_f_only = config.contemporaneous_f_only;
  iopts.identity_u = config.identity_u;
  iopts.include_lag = config.include_lag;
  GmmProblem problem = build_instruments(data, fit.f_scores, iopts);
  fit.moment_count = problem.moment_count;
  const Matrix dy_raw = problem.dy;

  // Step 2: first-stage GMM without the error-factor structure.
  const WeightMatrix w1 = one_step_weight(problem);
  GmmEstimate current = solve_step(problem, w1, config.gmm_steps, false);
  Vector coefs = current.coefficients();

  // Step 3: error-factor count, selected once and frozen. The count is capped
  // at T-2 so the absorption can never reproduce the residual exactly and
  // trivialize the second stage.
  Matrix u_hat =
      levels_residual(data, fit.f_scores, current.rho_hat, current.beta_f_hat, config.include_lag);
  int s;
  if (config.force_s) {
    s = std::min({*config.force_s, n, t - 2});
    fit.diagnostics.s_report = forced_report(config.s_criterion, s);
  } else {
    const int kmax_s = std::min({config.kmax_s, n, t - 2});
    fit.diagnostics.s_report = select_s_errors(u_hat, kmax_s, config.s_criterion);
    s = fit.diagnostics.s_report.chosen_k;
  }

  // Steps 2-4 repeat: absorb the differenced interactive term, re-solve,
  // refresh the decomposition from the new residual. Runs the full budget
  // unless the coefficients reach the tolerance early; the recorded objective
  // is the interactive-model misfit.
  FactorDecomposition edec = pca(u_hat.transpose(), s);
  bool converged = false;
  double delta = 0.0;
  for (int iter = 0; iter < config.max_outer_iterations; ++iter) {
    fit.diagnostics.objective_trace.push_back(edec.residuals.squaredNorm());
    problem.dy = absorb_interactive(dy_raw, edec);
    const bool last = iter + 1 == config.max_outer_iterations;
    const GmmEstimate next = solve_step(problem, w1, config.gmm_steps, last);
    delta = (next.coefficients() - coefs).cwiseAbs().maxCoeff();
    current = next;
    coefs = next.coefficients();
    fit.diagnostics.iterations = iter + 1;
    u_hat = levels_residual(data, fit.f_scores, current.rho_hat, current.beta_f_hat,
                            config.include_lag);
    edec = pca(u_hat.transpose(), s);  // consistent with the latest coefficients
    if (delta < config.convergence_tol) {
      converged = true;
      break;
    }
  }
  if (current.avar.size() == 0) current.avar = asymptotic_variance(current, problem);
  fit.diagnostics.final_delta = delta;
  fit.diagnostics.converged = converged || delta <= config.stability_tol;
  fit.diagnostics.weight_regularized = current.weight_regularized;

  fit.error_factors = edec;
  fit.beta_l = current.rho_hat;
  fit.beta_f = current.beta_f_hat;
  fit.gmm = current;

  // Fitted values: lag + factor terms + (individual level + G Gamma').
  fit.interactive_term = Matrix::Constant(n, t, kNaN);
  fit.fitted = Matrix::Constant(n, t, kNaN);
  fit.residuals = Matrix::Constant(n, t, kNaN);
  for (int i = 0; i < n; ++i) {
    for (int c = 1; c < t; ++c) {
      double inter = edec.col_means[i];
      if (s > 0) inter += edec.scores.row(c - 1).dot(edec.loadings.row(i));
      fit.interactive_term(i, c) = inter;
      double v = inter;
      if (config.include_lag) v += fit.beta_l * data.y(i, c - 1);
      for (int j = 0; j < r; ++j) v += fit.f_scores.at(i, c, j) * fit.beta_f[j];
      fit.fitted(i, c) = v;
      fit.residuals(i, c) = data.y(i, c) - v;
    }
  }
  return fit;
}

Matrix forecast(const DmdfmFit& fit, const PanelDataset& data, int horizon,
                const ForecastOptions& options) {
  if (horizon < 0) throw DataError("BadHorizon", "horizon must be nonnegative");
  const int n = fit.n_individuals;
  if (data.n_individuals != n)
    throw dimension_mismatch("forecast data holds a different individual count");
  if (horizon == 0) return Matrix(n, 0);
  const int t_train = fit.n_periods;
  if (data.n_periods < t_train + horizon)
    throw missing_future_regressors("forecasting " + std::to_string(horizon) +
                                    " period(s) needs regressors up to period " +
                                    std::to_string(t_train + horizon - 1) + ", panel has " +
                                    std::to_string(data.n_periods));

  const int s = fit.s();
  const Matrix& g = fit.error_factors.scores;  // (t_train - 1) x s
  Vector g_last = s > 0 ? Vector(g.row(g.rows() - 1)) : Vector();
  Vector g_phi = Vector::Ones(s);
  if (s > 0 && fit.config.g_forecast == GForecastRule::ar1 && g.rows() >= 2) {
    for (int j = 0; j < s; ++j) {
      double num = 0.0, den = 0.0;
      for (int row = 1; row < g.rows(); ++row) {
        num += g(row, j) * g(row - 1, j);
        den += g(row - 1, j) * g(row - 1, j);
      }
      g_phi[j] = den > 0.0 ? num / den : 0.0;
    }
  }

  Matrix out(n, horizon);
  Vector g_cur = g_last;
  for (int h = 1; h <= horizon; ++h) {
    const int c = t_train - 1 + h;
    const Matrix f_row = factor_scores(fit.regressor_factors, data.x.period(c));
    if (s > 0 && fit.config.g_forecast == GForecastRule::ar1)
      g_cur = g_cur.cwiseProduct(g_phi).eval();
    for (int i = 0; i < n; ++i) {
      double inter = fit.error_factors.col_means[i];
      if (s > 0) inter += g_cur.dot(fit.error_factors.loadings.row(i));
      double y_prev;
      if (h == 1 || options.roll_with_observed)
        y_prev = data.y(i, c - 1);
      else
        y_prev = out(i, h - 2);
      double v = inter;
      if (fit.config.include_lag) v += fit.beta_l * y_prev;
      for (int j = 0; j < fit.r(); ++j) v += f_row(i, j) * fit.beta_f[j];
      out(i, h - 1) = v;
    }
  }
  return out;
}

ResidualReport residual_diagnostics(const DmdfmFit& fit, double z) {
  ResidualReport report;
  const int n = fit.n_individuals;
  const int t = fit.n_periods;
  const int count = t - 1;
  report.individuals.resize(n);
  for (int i = 0; i < n; ++i) {
    IndividualDiagnostics& d = report.individuals[i];
    double sum = 0.0;
    for (int c = 1; c < t; ++c) sum += fit.residuals(i, c);
    d.mean = sum / count;
    double ss = 0.0, cross = 0.0;
    for (int c = 1; c < t; ++c) {
      const double e = fit.residuals(i, c) - d.mean;
      ss += e * e;
      if (c + 1 < t) cross += e * (fit.residuals(i, c + 1) - d.mean);
    }
    d.variance = ss / count;
    d.autocorr1 = ss > 0.0 ? cross / ss : 0.0;
    const double sd = std::sqrt(d.variance);
    d.mean_flag = std::abs(d.mean) > z * sd / std::sqrt(static_cast<double>(count));
    d.autocorr_flag = std::abs(d.autocorr1) > z / std::sqrt(static_cast<double>(count));
    report.mean_flags += d.mean_flag;
    report.autocorr_flags += d.autocorr_flag;
  }
  return report;
}

std::string ResidualReport::to_json() const {
  ordered_json j;
  j["mean_flags"] = mean_flags;
  j["autocorr_flags"] = autocorr_flags;
  ordered_json arr = ordered_json::array();
  for (const auto& d : individuals) {
    ordered_json e;
    e["mean"] = d.mean;
    e["variance"] = d.variance;
    e["autocorr1"] = d.autocorr1;
    e["mean_flag"] = d.mean_flag;
    e["autocorr_flag"] = d.autocorr_flag;
    arr.push_back(e);
  }
  j["individuals"] = arr;
  return j.dump(2);
}

std::string DmdfmFit::to_json() const {
  ordered_json j;
  j["n_individuals"] = n_individuals;
  j["n_periods"] = n_periods;
  j["r"] = r();
  j["s"] = s();
  j["beta_l"] = beta_l;
  j["beta_f"] = std::vector<double>(beta_f.begin(), beta_f.end());
  std::vector<double> se;
  for (int i = 0; i < gmm.avar.rows(); ++i)
    se.push_back(std::sqrt(std::max(0.0, gmm.avar(i, i))));
  j["std_errors"] = se;
  j["objective_value"] = gmm.objective_value;
  j["moment_count"] = moment_count;
  j["r_selection"] = report_json(diagnostics.r_report);
  j["s_selection"] = report_json(diagnostics.s_report);
  j["objective_trace"] = diagnostics.objective_trace;
  j["iterations"] = diagnostics.iterations;
  j["final_delta"] = diagnostics.final_delta;
  j["converged"] = diagnostics.converged;
  j["weight_regularized"] = diagnostics.weight_regularized;
  return j.dump(2);
}

}  // namespace dmdfm
