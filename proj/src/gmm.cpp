#include "dmdfm/gmm.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "dmdfm/errors.hpp"
#include "dmdfm/parallel.hpp"

namespace dmdfm {

namespace {

constexpr int kReduceChunk = 16;
constexpr double kRankTol = 1e-12;

/// Symmetric inverse via eigendecomposition; pseudo-inverse when the smallest
/// eigenvalue falls below tol * largest.
Matrix symmetric_inverse(const Matrix& m, bool& regularized) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector& ev = eig.eigenvalues();
  const double emax = ev.cwiseAbs().maxCoeff();
  const double tol = emax * kRankTol;
  regularized = false;
  Vector inv(ev.size());
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] > tol) {
      inv[i] = 1.0 / ev[i];
    } else {
      inv[i] = 0.0;
      regularized = true;
    }
  }
  if (emax == 0.0) regularized = true;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// sum_i Z_i U Z_i' for tridiagonal U(diag, off) exploiting the block
/// structure; fixed-order chunked reduction keeps the result thread-invariant.
Matrix accumulate_zuz(const GmmProblem& p, double u_diag, double u_off) {
  const int q = p.q();
  const int ne = p.n_equations();
  return chunked_reduce<Matrix>(
      p.n, kReduceChunk, [&] { return Matrix::Zero(q, q).eval(); },
      [&](Matrix& acc, int i) {
        const auto& h = p.blocks[i];
        for (int e = 0; e < ne; ++e) {
          acc.block(p.block_offsets[e], p.block_offsets[e], p.block_rows[e], p.block_rows[e])
              .noalias() += u_diag * h[e] * h[e].transpose();
          if (u_off != 0.0 && e + 1 < ne) {
            acc.block(p.block_offsets[e], p.block_offsets[e + 1], p.block_rows[e],
                      p.block_rows[e + 1])
                .noalias() += u_off * h[e] * h[e + 1].transpose();
            acc.block(p.block_offsets[e + 1], p.block_offsets[e], p.block_rows[e + 1],
                      p.block_rows[e])
                .noalias() += u_off * h[e + 1] * h[e].transpose();
          }
        }
      },
      [](Matrix& into, const Matrix& part) { into += part; });
}

/// sum_i Z_i w_i w_i' Z_i' for per-individual equation-level vectors w_i
/// (two-step weight: w_i = differenced residuals of individual i).
Matrix accumulate_zwwz(const GmmProblem& p, const Matrix& w_rows) {
  const int q = p.q();
  const int ne = p.n_equations();
  return chunked_reduce<Matrix>(
      p.n, kReduceChunk, [&] { return Matrix::Zero(q, q).eval(); },
      [&](Matrix& acc, int i) {
        const auto& h = p.blocks[i];
        for (int e = 0; e < ne; ++e)
          for (int f = 0; f < ne; ++f)
            acc.block(p.block_offsets[e], p.block_offsets[f], p.block_rows[e], p.block_rows[f])
                .noalias() += (w_rows(i, e) * w_rows(i, f)) * h[e] * h[f].transpose();
      },
      [](Matrix& into, const Matrix& part) { into += part; });
}

/// sum_i Z_i M_i where M_i has one row per equation (columns: regressors or
/// the response difference).
Matrix accumulate_zx(const GmmProblem& p, int n_cols,
                     const std::function<void(int, int, Eigen::Ref<Eigen::RowVectorXd>)>& fill) {
  const int q = p.q();
  const int ne = p.n_equations();
  return chunked_reduce<Matrix>(
      p.n, kReduceChunk, [&] { return Matrix::Zero(q, n_cols).eval(); },
      [&](Matrix& acc, int i) {
        Eigen::RowVectorXd row(n_cols);
        for (int e = 0; e < ne; ++e) {
          fill(i, e, row);
          acc.middleRows(p.block_offsets[e], p.block_rows[e]).noalias() +=
              p.blocks[i][e] * row;
        }
      },
      [](Matrix& into, const Matrix& part) { into += part; });
}

Matrix moment_cross_regressors(const GmmProblem& p) {
  const int lag = p.include_lag ? 1 : 0;
  return accumulate_zx(p, p.n_params(), [&](int i, int e, Eigen::Ref<Eigen::RowVectorXd> row) {
    if (lag) row(0) = p.dy_lag(i, e);
    for (int j = 0; j < p.r; ++j) row(lag + j) = p.df.at(i, e, j);
  });
}

Vector moment_cross_response(const GmmProblem& p) {
  Matrix m = accumulate_zx(p, 1, [&](int i, int e, Eigen::Ref<Eigen::RowVectorXd> row) {
    row(0) = p.dy(i, e);
  });
  return m.col(0);
}

Vector stacked_moment(const GmmProblem& p, const Matrix& resid) {
  Matrix m = accumulate_zx(p, 1, [&](int i, int e, Eigen::Ref<Eigen::RowVectorXd> row) {
    row(0) = resid(i, e);
  });
  return m.col(0) / p.n;
}

Matrix residual_matrix(const GmmProblem& p, double rho, const Vector& beta_f) {
  Matrix resid = p.dy - rho * p.dy_lag;
  if (p.r > 0) {
    for (int i = 0; i < p.n; ++i)
      resid.row(i) -= (p.df.individual(i) * beta_f).transpose();
  }
  return resid;
}

}  // namespace

Matrix GmmProblem::z_matrix(int i) const {
  Matrix z = Matrix::Zero(q(), n_equations());
  for (int e = 0; e < n_equations(); ++e)
    z.block(block_offsets[e], e, block_rows[e], 1) = blocks[i][e];
  return z;
}

Matrix GmmProblem::x_matrix(int i) const {
  const int lag = include_lag ? 1 : 0;
  Matrix x(n_equations(), n_params());
  for (int e = 0; e < n_equations(); ++e) {
    if (lag) x(e, 0) = dy_lag(i, e);
    for (int j = 0; j < r; ++j) x(e, lag + j) = df.at(i, e, j);
  }
  return x;
}

GmmProblem build_instruments(const PanelDataset& data, const PanelTensor& f_scores,
                             const InstrumentOptions& options) {
  const int n = data.n_individuals;
  const int t = data.n_periods;
  if (t < 3) throw too_few_periods("difference GMM needs at least 3 periods, got " +
                                   std::to_string(t));
  if (f_scores.k > 0 && (f_scores.n != n || f_scores.t != t))
    throw dimension_mismatch("factor scores are not aligned with the panel");

  const int r = f_scores.k;
  int lag_depth = options.max_lag_depth.value_or(t <= 8 ? t : 4);
  if (lag_depth < 1) lag_depth = 1;

  GmmProblem p;
  p.n = n;
  p.n_periods = t;
  p.r = r;
  p.identity_u = options.identity_u;
  p.include_lag = options.include_lag;

  const int ne = t - 2;
  p.dy.resize(n, ne);
  p.dy_lag.resize(n, ne);
  p.df = PanelTensor(n, ne, r);
  for (int i = 0; i < n; ++i) {
    for (int e = 0; e < ne; ++e) {
      const int c = e + 2;
      p.dy(i, e) = data.y(i, c) - data.y(i, c - 1);
      p.dy_lag(i, e) = data.y(i, c - 1) - data.y(i, c - 2);
      for (int j = 0; j < r; ++j)
        p.df.at(i, e, j) = f_scores.at(i, c, j) - f_scores.at(i, c - 1, j);
    }
  }

  p.block_rows.resize(ne);
  p.block_offsets.resize(ne);
  const int f_rows = options.contemporaneous_f_only ? r : r * (t - 1);
  long offset = 0;
  for (int e = 0; e < ne; ++e) {
    const int c = e + 2;
    const int y_rows = std::min(c - 1, lag_depth);
    p.block_rows[e] = y_rows + f_rows;
    p.block_offsets[e] = static_cast<int>(offset);
    offset += p.block_rows[e];
  }
  p.moment_count = offset;

  p.blocks.assign(n, {});
  for (int i = 0; i < n; ++i) {
    p.blocks[i].resize(ne);
    for (int e = 0; e < ne; ++e) {
      const int c = e + 2;
      const int y_rows = std::min(c - 1, lag_depth);
      Vector h(p.block_rows[e]);
      int pos = 0;
      for (int s = c - 1 - y_rows; s <= c - 2; ++s) h[pos++] = data.y(i, s);
      if (options.contemporaneous_f_only) {
        for (int j = 0; j < r; ++j) h[pos++] = p.df.at(i, e, j);
      } else {
        for (int s = 1; s < t; ++s)
          for (int j = 0; j < r; ++j) h[pos++] = f_scores.at(i, s, j);
      }
      p.blocks[i][e] = std::move(h);
    }
  }

  // Equilibrate every instrument row to unit RMS across individuals. This is
  // a diagonal instrument transform (estimates are unchanged for invertible
  // weights) and keeps the pseudo-inverse fallback stable under regressor
  // rescaling when the weight is rank deficient.
  for (int e = 0; e < ne; ++e) {
    for (int row = 0; row < p.block_rows[e]; ++row) {
      double ss = 0.0;
      for (int i = 0; i < n; ++i) ss += p.blocks[i][e][row] * p.blocks[i][e][row];
      const double rms = std::sqrt(ss / n);
      if (rms > 1e-300)
        for (int i = 0; i < n; ++i) p.blocks[i][e][row] /= rms;
    }
  }
  return p;
}

WeightMatrix one_step_weight(const GmmProblem& problem) {
  if (problem.n < 2) throw DataError("TooFewIndividuals", "one-step weight needs N >= 2");
  const double u_diag = problem.identity_u ? 1.0 : 2.0;
  const double u_off = problem.identity_u ? 0.0 : -1.0;
  Matrix s = accumulate_zuz(problem, u_diag, u_off) / problem.n;
  WeightMatrix wm;
  wm.w = symmetric_inverse(s, wm.regularized);
  if (wm.regularized)
    warn("one-step weight accumulation is singular; using pseudo-inverse");
  return wm;
}

Vector GmmEstimate::coefficients() const {
  Vector c(1 + beta_f_hat.size());
  c[0] = rho_hat;
  c.tail(beta_f_hat.size()) = beta_f_hat;
  return c;
}

std::string GmmEstimate::to_json() const {
  std::ostringstream os;
  os << "{\"rho_hat\":" << format_double(rho_hat) << ",\"beta_f_hat\":[";
  for (int j = 0; j < beta_f_hat.size(); ++j) {
    if (j) os << ',';
    os << format_double(beta_f_hat[j]);
  }
  os << "],\"std_errors\":[";
  for (int j = 0; j < avar.rows(); ++j) {
    if (j) os << ',';
    os << format_double(std::sqrt(std::max(0.0, avar(j, j))));
  }
  os << "],\"objective_value\":" << format_double(objective_value);
  os << ",\"moment_count\":" << moment_count;
  if (first_step_objective)
    os << ",\"first_step_objective\":" << format_double(*first_step_objective);
  os << ",\"flags\":[";
  bool first = true;
  if (weight_regularized) {
    os << "\"weight_regularized\"";
    first = false;
  }
  if (second_step_degenerate) {
    if (!first) os << ',';
    os << "\"second_step_degenerate\"";
  }
  os << "]}";
  return os.str();
}

GmmEstimate gmm_solve(const GmmProblem& problem, const WeightMatrix& weight, bool with_avar) {
  const int np = problem.n_params();
  const Matrix sx = moment_cross_regressors(problem);
  const Vector sy = moment_cross_response(problem);

  const Matrix wsx = weight.w * sx;
  const Matrix normal = sx.transpose() * wsx;
  const Vector rhs = wsx.transpose() * sy;

  Eigen::JacobiSVD<Matrix> svd(normal, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[np - 1];
  if (!(smin > smax * kRankTol)) {
    std::ostringstream os;
    os << "normal matrix is rank deficient (condition number "
       << (smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity()) << ")";
    throw rank_deficient_design(os.str());
  }
  const Vector theta = svd.solve(rhs);

  GmmEstimate est;
  if (problem.include_lag) {
    est.rho_hat = theta[0];
    est.beta_f_hat = theta.tail(np - 1);
  } else {
    est.rho_hat = 0.0;
    est.beta_f_hat = theta;
  }
  est.residuals = residual_matrix(problem, est.rho_hat, est.beta_f_hat);
  est.weight_used = weight.w;
  est.weight_regularized = weight.regularized;
  est.moment_count = problem.moment_count;
  const Vector g = stacked_moment(problem, est.residuals);
  est.objective_value = g.dot(weight.w * g);
  if (with_avar) est.avar = asymptotic_variance(est, problem);
  return est;
}

GmmEstimate two_step(const GmmProblem& problem) {
  return two_step(problem, one_step_weight(problem), true);
}

GmmEstimate two_step(const GmmProblem& problem, const WeightMatrix& w1, bool with_avar) {
  GmmEstimate first = gmm_solve(problem, w1, with_avar);

  // Residuals at rounding-noise level leave the optimal weight undefined and
  // the first step already exact.
  const double resid_ss = first.residuals.squaredNorm();
  if (resid_ss <= 1e-20 * std::max(problem.dy.squaredNorm(), 1e-300)) {
    first.second_step_degenerate = true;
    first.first_step_objective = first.objective_value;
    return first;
  }
  Matrix v = accumulate_zwwz(problem, first.residuals) / problem.n;
  WeightMatrix w2;
  w2.w = symmetric_inverse(v, w2.regularized);
  if (w2.regularized)
    warn("two-step weight matrix is singular; using pseudo-inverse");
  try {
    GmmEstimate second = gmm_solve(problem, w2, with_avar);
    second.first_step_objective = first.objective_value;
    return second;
  } catch (const NumericalError&) {
    first.second_step_degenerate = true;
    first.first_step_objective = first.objective_value;
    return first;
  }
}

Matrix asymptotic_variance(const GmmEstimate& estimate, const GmmProblem& problem) {
  const long count = static_cast<long>(estimate.residuals.rows()) * estimate.residuals.cols();
  const double sigma2 = estimate.residuals.squaredNorm() / (2.0 * count);

  const Matrix sx = moment_cross_regressors(problem);
  const Matrix s_u = accumulate_zuz(problem, 2.0, -1.0);
  const Matrix& a = estimate.weight_used;

  const Matrix asx = a * sx;
  const Matrix bread = sx.transpose() * asx;
  bool reg = false;
  const Matrix bread_inv = symmetric_inverse(bread, reg);
  const Matrix mid = asx.transpose() * (sigma2 / problem.n * s_u) * asx;
  Matrix avar = problem.n * (bread_inv * mid * bread_inv);
  avar = ((avar + avar.transpose()) / 2.0).eval();
  return avar;
}

double gmm_objective(const GmmProblem& problem, const Matrix& weight, double rho,
                     const Vector& beta_f) {
  const Matrix resid = residual_matrix(problem, rho, beta_f);
  const Vector g = stacked_moment(problem, resid);
  return g.dot(weight * g);
}

}  // namespace dmdfm
