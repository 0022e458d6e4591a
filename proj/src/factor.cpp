#include "dmdfm/factor.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dmdfm/errors.hpp"
#include "dmdfm/parallel.hpp"

namespace dmdfm {

namespace {

int dominant_axis(const Eigen::Ref<const Vector>& v) {
  int idx = 0;
  double best = -1.0;
  for (int i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (a > best) {
      best = a;
      idx = i;
    }
  }
  return idx;
}

}  // namespace

FactorDecomposition pca(const Matrix& input, int k) {
  const int m = static_cast<int>(input.rows());
  const int d = static_cast<int>(input.cols());
  const int n_comp = std::min(m, d);
  if (k < 0 || k > n_comp)
    throw k_too_large("k = " + std::to_string(k) + " exceeds min(m, d) = " +
                      std::to_string(n_comp));

  FactorDecomposition out;
  out.k = k;
  out.col_means = input.colwise().mean();
  Matrix centered = input.rowwise() - out.col_means.transpose();

  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();

  // Eigenvalues of C'C/m, descending; ties broken by the loading's dominant
  // input axis so equal inputs always decompose identically.
  std::vector<int> order(n_comp);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> lambda(n_comp);
  std::vector<int> axes(n_comp);
  for (int j = 0; j < n_comp; ++j) {
    lambda[j] = sv[j] * sv[j] / m;
    axes[j] = dominant_axis(svd.matrixV().col(j));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (lambda[a] != lambda[b]) return lambda[a] > lambda[b];
    return axes[a] < axes[b];
  });

  out.eigenvalues.resize(n_comp);
  for (int j = 0; j < n_comp; ++j) out.eigenvalues[j] = lambda[order[j]];

  const double total = centered.squaredNorm() / m;
  out.explained_share.resize(n_comp);
  for (int j = 0; j < n_comp; ++j)
    out.explained_share[j] = total > 0.0 ? std::max(0.0, out.eigenvalues[j] / total) : 0.0;

  Matrix v_k(d, k);
  for (int j = 0; j < k; ++j) v_k.col(j) = svd.matrixV().col(order[j]);
  // Largest-magnitude entry of each loading column is positive.
  for (int j = 0; j < k; ++j) {
    const int a = dominant_axis(v_k.col(j));
    if (v_k(a, j) < 0.0) v_k.col(j) = -v_k.col(j);
  }

  const double root_d = std::sqrt(static_cast<double>(d));
  out.loadings = v_k * root_d;
  out.scores = centered * v_k / root_d;
  out.residuals = centered - out.scores * out.loadings.transpose();
  return out;
}

Matrix factor_scores(const FactorDecomposition& decomp, const Matrix& new_rows) {
  const int d = static_cast<int>(decomp.loadings.rows());
  if (new_rows.cols() != d)
    throw dimension_mismatch("new rows have " + std::to_string(new_rows.cols()) +
                             " columns, loadings expect " + std::to_string(d));
  if (decomp.k == 0) return Matrix::Zero(new_rows.rows(), 0);
  const Matrix centered = new_rows.rowwise() - decomp.col_means.transpose();
  const Matrix gram = decomp.loadings.transpose() * decomp.loadings;
  return gram.ldlt().solve(decomp.loadings.transpose() * centered.transpose()).transpose();
}

std::string to_string(SelectionCriterion c) {
  switch (c) {
    case SelectionCriterion::variance_contribution: return "variance_contribution";
    case SelectionCriterion::scree: return "scree";
    case SelectionCriterion::pcp1: return "pcp1";
    case SelectionCriterion::icp1: return "icp1";
  }
  return "variance_contribution";
}

SelectionCriterion selection_criterion_from_string(const std::string& s) {
  if (s == "variance_contribution") return SelectionCriterion::variance_contribution;
  if (s == "scree") return SelectionCriterion::scree;
  if (s == "pcp1") return SelectionCriterion::pcp1;
  if (s == "icp1") return SelectionCriterion::icp1;
  throw DataError("UnknownCriterion", "unknown selection criterion '" + s + "'");
}

std::string SelectionReport::to_json() const {
  std::ostringstream os;
  os << "{\"criterion\":\"" << to_string(criterion) << "\",\"candidates\":[";
  for (std::size_t i = 0; i < candidate_values.size(); ++i) {
    if (i) os << ',';
    os << format_double(candidate_values[i]);
  }
  os << "],\"chosen_k\":" << chosen_k << "}";
  return os.str();
}

double pcp1(int k, double v_k, double sigma2_hat, int n, int t) {
  const double nt = static_cast<double>(n) * t;
  const double scale = (n + t) / nt;
  return v_k + k * sigma2_hat * scale * std::log(nt / (n + t));
}

double icp1(int k, double v_k, int n, int t) { return pcp1(k, v_k, 1.0, n, t); }

SelectionReport select_r_regressors(const PanelDataset& data, double threshold, int kmax,
                                    bool pooled) {
  if (threshold <= 0.0 || threshold > 1.0)
    throw DataError("BadThreshold", "variance threshold must lie in (0, 1]");
  const int n = data.n_individuals;
  const int p = data.n_regressors;
  const int limit = pooled ? std::min(static_cast<int>(data.x.rows()), p) : std::min(n, p);
  if (kmax < 0 || kmax > limit)
    throw k_too_large("kmax = " + std::to_string(kmax) + " exceeds " + std::to_string(limit));

  // Cumulative explained shares per period, computed independently and merged
  // in fixed period order.
  std::vector<std::vector<double>> cum;
  if (pooled) {
    cum.resize(1);
    const FactorDecomposition dec = pca(data.stacked_regressors(), 0);
    std::vector<double>& c = cum[0];
    c.resize(kmax + 1, 0.0);
    for (int k = 1; k <= kmax; ++k) c[k] = c[k - 1] + dec.explained_share[k - 1];
  } else {
    cum.resize(data.n_periods);
    parallel_for(data.n_periods, [&](int s) {
      const FactorDecomposition dec = pca(data.x.period(s), 0);
      std::vector<double>& c = cum[s];
      c.resize(kmax + 1, 0.0);
      for (int k = 1; k <= kmax; ++k) c[k] = c[k - 1] + dec.explained_share[k - 1];
    });
  }

  SelectionReport report;
  report.criterion = SelectionCriterion::variance_contribution;
  report.candidate_values.assign(kmax + 1, 1.0);
  report.candidate_values[0] = 0.0;
  for (const auto& c : cum)
    for (int k = 1; k <= kmax; ++k)
      report.candidate_values[k] = std::min(report.candidate_values[k], c[k]);

  report.chosen_k = kmax;  // cap when no k reaches the threshold
  for (int k = 0; k <= kmax; ++k) {
    if (report.candidate_values[k] >= threshold) {
      report.chosen_k = k;
      break;
    }
  }
  return report;
}

SelectionReport select_s_errors(const Matrix& residuals, int kmax, SelectionCriterion criterion) {
  const int n = static_cast<int>(residuals.rows());
  const int t = static_cast<int>(residuals.cols());
  if (kmax < 0 || kmax > std::min(n, t))
    throw k_too_large("kmax = " + std::to_string(kmax) + " exceeds min(N, T) = " +
                      std::to_string(std::min(n, t)));
  if (criterion != SelectionCriterion::pcp1 && criterion != SelectionCriterion::icp1)
    throw DataError("UnknownCriterion", "error-factor selection expects pcp1 or icp1");

  // Transposed orientation: loadings live on individuals (a3 scaling), scores
  // on periods. One spectrum gives every V(k): dropping k factors leaves
  // exactly the tail eigenvalue mass, V(k) = sum_{j>k} lambda_j / N.
  const FactorDecomposition dec = pca(residuals.transpose(), 0);
  std::vector<double> v(kmax + 1, 0.0);
  double tail = dec.eigenvalues.sum();
  v[0] = tail / n;
  for (int k = 1; k <= kmax; ++k) {
    tail -= dec.eigenvalues[k - 1];
    v[k] = std::max(0.0, tail) / n;
  }
  const double sigma2 = v[kmax];

  SelectionReport report;
  report.criterion = criterion;
  report.candidate_values.resize(kmax + 1);
  for (int k = 0; k <= kmax; ++k)
    report.candidate_values[k] = criterion == SelectionCriterion::pcp1
                                     ? pcp1(k, v[k], sigma2, n, t)
                                     : icp1(k, v[k], n, t);
  report.chosen_k = 0;
  for (int k = 1; k <= kmax; ++k)
    if (report.candidate_values[k] < report.candidate_values[report.chosen_k]) report.chosen_k = k;
  return report;
}

}  // namespace dmdfm
