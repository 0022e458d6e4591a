#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace dmdfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Individual-major stacked panel tensor: row (i * t + s) holds the k-vector
/// for individual i at period s. Per-individual slices are contiguous blocks,
/// per-period slices are strided gathers.
struct PanelTensor {
  int n = 0;
  int t = 0;
  int k = 0;
  Matrix flat;  // (n * t) x k

  PanelTensor() = default;
  PanelTensor(int n_, int t_, int k_)
      : n(n_), t(t_), k(k_), flat(Matrix::Zero(static_cast<long>(n_) * t_, k_)) {}

  long rows() const { return static_cast<long>(n) * t; }

  double& at(int i, int s, int j) { return flat(static_cast<long>(i) * t + s, j); }
  double at(int i, int s, int j) const { return flat(static_cast<long>(i) * t + s, j); }

  auto row(int i, int s) const { return flat.row(static_cast<long>(i) * t + s); }
  auto row(int i, int s) { return flat.row(static_cast<long>(i) * t + s); }

  /// t x k block for one individual.
  auto individual(int i) const { return flat.middleRows(static_cast<long>(i) * t, t); }
  auto individual(int i) { return flat.middleRows(static_cast<long>(i) * t, t); }

  /// n x k gather of one period across individuals.
  Matrix period(int s) const {
    Matrix out(n, k);
    for (int i = 0; i < n; ++i) out.row(i) = flat.row(static_cast<long>(i) * t + s);
    return out;
  }
};

}  // namespace dmdfm
