#include "dmdfm/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dmdfm/errors.hpp"
#include "dmdfm/parallel.hpp"
#include "dmdfm/rng.hpp"

namespace dmdfm {

namespace {

using ordered_json = nlohmann::ordered_json;

enum StreamId : std::uint64_t {
  kAlpha = 1,
  kRhoEps,
  kEta,
  kRhoG,
  kUg,
  kGamma,
  kACoef,
  kTauH,
  kZeta,
  kRhoQ,
  kNuQ,
  kOmega,
  kXLambda,
  kXNoise,
  kSubset,
};

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (int i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

std::atomic<long>* g_warn_counter = nullptr;

void counting_warn(const std::string&) {
  if (g_warn_counter) g_warn_counter->fetch_add(1);
}

}  // namespace

void SimulationConfig::validate() const {
  if (n < 2 || t < 3) throw DataError("BadConfig", "simulation needs n >= 2 and t >= 3");
  if (reps < 1) throw DataError("BadConfig", "reps must be at least 1");
  if (burn_in < 0) throw DataError("BadConfig", "burn_in must be nonnegative");
  if (intercept_var < 0 || omega_var < 0 || x_noise_var < 0 || eta_sd < 0 || g_innov_sd < 0 ||
      h_innov_sd < 0 || q_innov_sd < 0)
    throw DataError("BadConfig", "variance parameters must be nonnegative");
  if (uniform_hi < uniform_lo) throw DataError("BadConfig", "uniform support is inverted");
  if (p_observables < 1) throw DataError("BadConfig", "p_observables must be at least 1");
}

GeneratedPanel generate_panel(const SimulationConfig& cfg, int rep_index) {
  cfg.validate();
  const int n = cfg.n;
  const int t = cfg.t;
  const int total = cfg.burn_in + t;
  const int keep0 = cfg.burn_in;  // first retained time index
  const auto stream = [&](StreamId id) {
    return Rng(derive_stream(cfg.seed, static_cast<std::uint64_t>(rep_index), id));
  };

  // Interceptions.
  Vector alpha(n);
  {
    Rng r = stream(kAlpha);
    const double sd = std::sqrt(cfg.intercept_var);
    for (int i = 0; i < n; ++i) alpha[i] = r.normal(cfg.intercept_mean, sd);
  }

  // Idiosyncratic AR(1) errors, one autocorrelation draw per individual.
  Vector rho_eps(n);
  {
    Rng r = stream(kRhoEps);
    for (int i = 0; i < n; ++i) rho_eps[i] = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }
  Matrix eps = Matrix::Zero(n, total);
  {
    Rng r = stream(kEta);
    for (int i = 0; i < n; ++i)
      for (int s = 1; s < total; ++s)
        eps(i, s) = rho_eps[i] * eps(i, s - 1) + r.normal(0.0, cfg.eta_sd);
  }

  // Error factors g_j, one autocorrelation draw per factor.
  double rho_g[2];
  {
    Rng r = stream(kRhoG);
    rho_g[0] = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
    rho_g[1] = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }
  Matrix g_full = Matrix::Zero(total, 2);
  {
    Rng r = stream(kUg);
    Rng r_rho = stream(kRhoG);  // reuse the stream family for per-period draws
    for (int j = 0; j < 2; ++j)
      for (int s = 1; s < total; ++s) {
        const double rho =
            cfg.g_rho_per_period ? r_rho.uniform(cfg.uniform_lo, cfg.uniform_hi) : rho_g[j];
        g_full(s, j) = rho * g_full(s - 1, j) + r.normal(0.0, cfg.g_innov_sd);
      }
  }

  // Error-factor loadings: gamma(i, j) enters the response; the f processes
  // share the same draws or use their own set per factor.
  Matrix gamma(n, 2);
  Matrix gamma_f[2];
  {
    Rng r = stream(kGamma);
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < n; ++i) gamma(i, j) = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
    if (cfg.gamma_shared) {
      gamma_f[0] = gamma;
      gamma_f[1] = gamma;
    } else {
      for (int k = 0; k < 2; ++k) {
        gamma_f[k].resize(n, 2);
        for (int j = 0; j < 2; ++j)
          for (int i = 0; i < n; ++i) gamma_f[k](i, j) = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
      }
    }
  }

  // Level terms a_ki * h_kt.
  Matrix a_coef(n, 2);
  {
    Rng r = stream(kACoef);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < n; ++i) a_coef(i, k) = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }
  Matrix h_full(total, 2);
  {
    Rng r = stream(kTauH);
    const double rho_h[2] = {cfg.rho_1h, cfg.rho_2h};
    const double init[2] = {cfg.h1_init, cfg.h2_init};
    for (int k = 0; k < 2; ++k) {
      h_full(0, k) = init[k];
      for (int s = 1; s < total; ++s)
        h_full(s, k) = rho_h[k] * h_full(s - 1, k) + r.normal(0.0, cfg.h_innov_sd);
    }
  }

  // Spatial component: per-period coefficients zeta, individual chain q.
  Matrix zeta(total, 2);
  {
    Rng r = stream(kZeta);
    for (int k = 0; k < 2; ++k)
      for (int s = 0; s < total; ++s) zeta(s, k) = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }
  double rho_q;
  {
    Rng r = stream(kRhoQ);
    rho_q = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }
  Vector q(n);
  {
    Rng r = stream(kNuQ);
    double prev = cfg.q_init;
    for (int i = 0; i < n; ++i) {
      q[i] = rho_q * prev + r.normal(0.0, cfg.q_innov_sd);
      prev = q[i];
    }
  }

  // Common factors of the regressors.
  Matrix f_full[2] = {Matrix(n, total), Matrix(n, total)};
  {
    Rng r = stream(kOmega);
    const double omega_sd = std::sqrt(cfg.omega_var);
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < n; ++i)
        for (int s = 0; s < total; ++s)
          f_full[k](i, s) = a_coef(i, k) * h_full(s, k) + gamma_f[k](i, 0) * g_full(s, 0) +
                            gamma_f[k](i, 1) * g_full(s, 1) + zeta(s, k) * q[i] +
                            r.normal(0.0, omega_sd);
  }

  // Response recursion, y_i0 = 0, burn-in discarded.
  Matrix y_full = Matrix::Zero(n, total);
  for (int i = 0; i < n; ++i)
    for (int s = 1; s < total; ++s)
      y_full(i, s) = alpha[i] + cfg.beta_l1 * y_full(i, s - 1) + cfg.beta_f1 * f_full[0](i, s) +
                     cfg.beta_f2 * f_full[1](i, s) + gamma(i, 0) * g_full(s, 0) +
                     gamma(i, 1) * g_full(s, 1) + eps(i, s);

  // Observable regressors on the retained window.
  const int p = cfg.p_observables;
  Matrix lambda(p, 2);
  {
    Rng r = stream(kXLambda);
    for (int j = 0; j < p; ++j)
      for (int k = 0; k < 2; ++k) lambda(j, k) = r.uniform(cfg.uniform_lo, cfg.uniform_hi);
  }

  GeneratedPanel out;
  out.panel.n_individuals = n;
  out.panel.n_periods = t;
  out.panel.n_regressors = p;
  out.panel.y = y_full.middleCols(keep0, t);
  out.panel.x = PanelTensor(n, t, p);
  {
    Rng r = stream(kXNoise);
    const double noise_sd = std::sqrt(cfg.x_noise_var);
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < t; ++s)
        for (int j = 0; j < p; ++j)
          out.panel.x.at(i, s, j) = f_full[0](i, keep0 + s) * lambda(j, 0) +
                                    f_full[1](i, keep0 + s) * lambda(j, 1) +
                                    r.normal(0.0, noise_sd);
  }
  out.panel.individual_ids.resize(n);
  for (int i = 0; i < n; ++i) out.panel.individual_ids[i] = std::to_string(i + 1);
  out.panel.period_ids.resize(t);
  for (int s = 0; s < t; ++s) out.panel.period_ids[s] = std::to_string(s);

  out.truth.beta_l1 = cfg.beta_l1;
  out.truth.beta_f1 = cfg.beta_f1;
  out.truth.beta_f2 = cfg.beta_f2;
  out.truth.alpha = alpha;
  out.truth.gamma = gamma;
  out.truth.f1 = f_full[0].middleCols(keep0, t);
  out.truth.f2 = f_full[1].middleCols(keep0, t);
  out.truth.g = g_full.middleRows(keep0, t);
  out.truth.eps = eps.middleCols(keep0, t);
  out.truth.rho_eps = rho_eps;
  out.truth.lambda = lambda;
  return out;
}

CoefficientEstimate align_to_truth(const DmdfmFit& fit, const TruthRecord& truth) {
  const int n = fit.n_individuals;
  const int t = fit.n_periods;
  const long rows = static_cast<long>(n) * (t - 1);

  CoefficientEstimate est;
  est.beta_l = fit.beta_l;

  // Principal components identify the systematic part F*beta + G*Gamma' as a
  // whole, not its split (the realized factors themselves carry interactive
  // structure). Expand the fitted systematic field in the truth basis
  // (intercept, f1, f2, gamma*g) and read the factor coefficients off the
  // f slopes.
  Vector field(rows);
  Matrix design(rows, 4);
  const int s_count = fit.s();
  for (int i = 0; i < n; ++i)
    for (int c = 1; c < t; ++c) {
      const long row = static_cast<long>(i) * (t - 1) + (c - 1);
      double v = 0.0;
      for (int j = 0; j < fit.r(); ++j) v += fit.f_scores.at(i, c, j) * fit.beta_f[j];
      if (s_count > 0)
        v += fit.error_factors.scores.row(c - 1).dot(fit.error_factors.loadings.row(i));
      field[row] = v;
      design(row, 0) = 1.0;
      design(row, 1) = truth.f1(i, c);
      design(row, 2) = truth.f2(i, c);
      design(row, 3) =
          truth.gamma(i, 0) * truth.g(c, 0) + truth.gamma(i, 1) * truth.g(c, 1);
    }
  const Vector slopes = design.colPivHouseholderQr().solve(field);
  est.beta_f1 = slopes[1];
  est.beta_f2 = slopes[2];
  return est;
}

McEstimator default_mc_estimator() {
  return [](const GeneratedPanel& gen, const SimulationConfig& cfg,
            int /*rep*/) -> CoefficientEstimate {
    try {
      const DmdfmFit fit = estimate(gen.panel, cfg.pipeline);
      CoefficientEstimate est = align_to_truth(fit, gen.truth);
      est.ok = fit.diagnostics.converged;
      return est;
    } catch (const NumericalError&) {
      CoefficientEstimate est;
      est.ok = false;
      return est;
    }
  };
}

McReport run_monte_carlo(const std::vector<SimulationConfig>& grid, const McEstimator& estimator) {
  McReport report;
  std::atomic<long> warn_count{0};
  const WarnHandler previous_handler = warn_handler();
  g_warn_counter = &warn_count;
  set_warn_handler(&counting_warn);

  for (const SimulationConfig& cfg : grid) {
    cfg.validate();
    std::vector<CoefficientEstimate> slots(cfg.reps);
    parallel_for(cfg.reps, [&](int rep) {
      const GeneratedPanel gen = generate_panel(cfg, rep);
      slots[rep] = estimator(gen, cfg, rep);
    });

    McCell cell;
    cell.n = cfg.n;
    cell.t = cfg.t;
    cell.reps = cfg.reps;
    double sum[3] = {0, 0, 0};
    double sumsq[3] = {0, 0, 0};
    int used = 0;
    for (int rep = 0; rep < cfg.reps; ++rep) {
      const CoefficientEstimate& e = slots[rep];
      if (!e.ok) {
        ++cell.failures;
        continue;
      }
      const double err[3] = {e.beta_l - cfg.beta_l1, e.beta_f1 - cfg.beta_f1,
                             e.beta_f2 - cfg.beta_f2};
      for (int j = 0; j < 3; ++j) {
        sum[j] += err[j];
        sumsq[j] += err[j] * err[j];
      }
      ++used;
    }
    cell.failure_rate = static_cast<double>(cell.failures) / cfg.reps;
    cell.valid = cell.failure_rate <= 0.10;
    if (used > 0) {
      for (int j = 0; j < 3; ++j) {
        cell.bias[j] = sum[j] / used;
        cell.rmse[j] = std::sqrt(sumsq[j] / used);
      }
    } else {
      cell.valid = false;
    }
    report.cells.push_back(cell);
  }

  set_warn_handler(previous_handler);
  g_warn_counter = nullptr;
  report.weight_warnings = warn_count.load();
  return report;
}

std::vector<SimulationConfig> full_grid(SimulationConfig base, int reps) {
  static constexpr int kCells[10][2] = {{20, 5},   {50, 5},   {50, 10},  {100, 5},  {100, 10},
                                        {100, 20}, {200, 5},  {200, 10}, {200, 20}, {200, 50}};
  std::vector<SimulationConfig> grid;
  for (const auto& cell : kCells) {
    SimulationConfig cfg = base;
    cfg.n = cell[0];
    cfg.t = cell[1];
    cfg.reps = reps;
    grid.push_back(cfg);
  }
  return grid;
}

ForecastExperiment run_forecast_experiment(const SimulationConfig& config, int horizon) {
  if (horizon < 0) throw DataError("BadHorizon", "horizon must be nonnegative");
  SimulationConfig extended = config;
  extended.t = config.t + horizon;
  const GeneratedPanel gen = generate_panel(extended, 0);

  // Training slice: the first config.t periods.
  PanelDataset train;
  train.n_individuals = gen.panel.n_individuals;
  train.n_periods = config.t;
  train.n_regressors = gen.panel.n_regressors;
  train.y = gen.panel.y.leftCols(config.t);
  train.x = PanelTensor(train.n_individuals, config.t, train.n_regressors);
  for (int i = 0; i < train.n_individuals; ++i)
    train.x.individual(i) = gen.panel.x.individual(i).topRows(config.t);
  train.individual_ids = gen.panel.individual_ids;
  train.period_ids.assign(gen.panel.period_ids.begin(), gen.panel.period_ids.begin() + config.t);

  const DmdfmFit fit = estimate(train, config.pipeline);
  ForecastOptions fopts;
  fopts.roll_with_observed = true;
  const Matrix pred = forecast(fit, gen.panel, horizon, fopts);

  ForecastExperiment exp;
  exp.horizon = horizon;
  exp.y_pred = pred;
  exp.y_true = gen.panel.y.rightCols(horizon);
  exp.period_labels.assign(gen.panel.period_ids.end() - horizon, gen.panel.period_ids.end());
  exp.avg_true = exp.y_true.colwise().mean();
  exp.avg_pred = exp.y_pred.colwise().mean();

  // MAPE over cells with non-negligible truth.
  double ape = 0.0;
  long ape_count = 0;
  for (int i = 0; i < exp.y_true.rows(); ++i)
    for (int h = 0; h < horizon; ++h)
      if (std::abs(exp.y_true(i, h)) > 1e-8) {
        ape += std::abs((exp.y_pred(i, h) - exp.y_true(i, h)) / exp.y_true(i, h));
        ++ape_count;
      }
  exp.mape = ape_count > 0 ? ape / ape_count : 0.0;

  if (horizon > 1) {
    const double mt = exp.avg_true.mean();
    const double mp = exp.avg_pred.mean();
    double stt = 0.0, spp = 0.0, stp = 0.0;
    for (int h = 0; h < horizon; ++h) {
      stt += (exp.avg_true[h] - mt) * (exp.avg_true[h] - mt);
      spp += (exp.avg_pred[h] - mp) * (exp.avg_pred[h] - mp);
      stp += (exp.avg_true[h] - mt) * (exp.avg_pred[h] - mp);
    }
    exp.avg_correlation = stt > 0.0 && spp > 0.0 ? stp / std::sqrt(stt * spp) : 0.0;
  }

  const int subset_size = std::min(6, config.n);
  Rng r(derive_stream(config.seed, 0, kSubset));
  std::vector<int> pool(config.n);
  for (int i = 0; i < config.n; ++i) pool[i] = i;
  for (int j = 0; j < subset_size; ++j) {
    const int pick = j + r.uniform_int(config.n - j);
    std::swap(pool[j], pool[pick]);
    exp.figure_subset.push_back(pool[j]);
  }
  std::sort(exp.figure_subset.begin(), exp.figure_subset.end());
  return exp;
}

void McReport::to_csv(std::ostream& out) const {
  out << "n,t,bias_beta_l1,bias_beta_f1,bias_beta_f2,rmse_beta_l1,rmse_beta_f1,rmse_beta_f2,"
         "reps,failures,failure_rate,valid\n";
  for (const McCell& c : cells) {
    out << c.n << ',' << c.t;
    for (int j = 0; j < 3; ++j) out << ',' << format_double(c.bias[j]);
    for (int j = 0; j < 3; ++j) out << ',' << format_double(c.rmse[j]);
    out << ',' << c.reps << ',' << c.failures << ',' << format_double(c.failure_rate) << ','
        << (c.valid ? 1 : 0) << "\n";
  }
}

std::string McReport::to_json() const {
  ordered_json j;
  ordered_json arr = ordered_json::array();
  for (const McCell& c : cells) {
    ordered_json cell;
    cell["n"] = c.n;
    cell["t"] = c.t;
    cell["bias"] = {c.bias[0], c.bias[1], c.bias[2]};
    cell["rmse"] = {c.rmse[0], c.rmse[1], c.rmse[2]};
    cell["reps"] = c.reps;
    cell["failures"] = c.failures;
    cell["failure_rate"] = c.failure_rate;
    cell["valid"] = c.valid;
    arr.push_back(cell);
  }
  j["cells"] = arr;
  j["weight_warnings"] = weight_warnings;
  return j.dump(2);
}

void ForecastExperiment::to_csv(std::ostream& out,
                                const std::vector<std::string>& individual_ids) const {
  out << "period,individual,y_true,y_pred\n";
  for (int h = 0; h < horizon; ++h) {
    for (int i = 0; i < y_true.rows(); ++i)
      out << period_labels[h] << ',' << individual_ids[i] << ',' << format_double(y_true(i, h))
          << ',' << format_double(y_pred(i, h)) << "\n";
    out << period_labels[h] << ",AVERAGE," << format_double(avg_true[h]) << ','
        << format_double(avg_pred[h]) << "\n";
  }
}

std::string ForecastExperiment::to_json() const {
  ordered_json j;
  j["horizon"] = horizon;
  j["mape"] = mape;
  j["avg_correlation"] = avg_correlation;
  j["figure_subset"] = figure_subset;
  return j.dump(2);
}

std::string TruthRecord::to_json() const {
  ordered_json j;
  j["beta_true"] = {{"beta_l1", beta_l1}, {"beta_f1", beta_f1}, {"beta_f2", beta_f2}};
  j["alpha"] = std::vector<double>(alpha.begin(), alpha.end());
  j["rho_eps"] = std::vector<double>(rho_eps.begin(), rho_eps.end());
  j["gamma"] = matrix_json(gamma);
  j["g"] = matrix_json(g);
  j["f1"] = matrix_json(f1);
  j["f2"] = matrix_json(f2);
  j["lambda"] = matrix_json(lambda);
  return j.dump();
}

}  // namespace dmdfm
