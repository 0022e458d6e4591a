#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dmdfm/types.hpp"

namespace dmdfm {

/// Balanced rectangular panel: responses y (N x T) and regressors x
/// (N x T x p). Column 0 of y is the first observed period and serves as the
/// base period for difference-GMM instruments. Immutable after construction.
struct PanelDataset {
  int n_individuals = 0;
  int n_periods = 0;
  int n_regressors = 0;
  Matrix y;       // N x T
  PanelTensor x;  // N, T, p
  std::vector<std::string> individual_ids;
  std::vector<std::string> period_ids;

  /// (N*T) x p stack of regressor rows, individual-major.
  const Matrix& stacked_regressors() const { return x.flat; }
};

/// Column mapping for long-format CSV ingestion. Empty `regressors` means
/// "every column after individual/period/y, in header order".
struct CsvSchema {
  std::string individual = "individual";
  std::string period = "period";
  std::string y = "y";
  std::vector<std::string> regressors;
};

/// Loads a long-format CSV (header `individual,period,y,x1,...,xp`).
/// The panel must be balanced with every (individual, period) pair exactly
/// once; row order in the file is irrelevant. Labels that all parse as
/// numbers sort numerically, otherwise lexicographically.
PanelDataset load_panel(const std::string& path, const CsvSchema& schema = {});
PanelDataset load_panel(std::istream& in, const CsvSchema& schema = {});

/// Writes the long format back out, sorted by individual then period.
/// Round-trips bit-exactly through load_panel.
void save_panel(const PanelDataset& data, const std::string& path);
void save_panel(const PanelDataset& data, std::ostream& out);

/// Shortest round-trip decimal rendering of a double (used by every CSV
/// writer so serialized output is byte-stable).
std::string format_double(double v);

/// Response aligned with its own lags: y_current[i][s] = y[i][s+h] and
/// y_lagged[i][s][j] = y[i][s+h-1-j].
struct LaggedView {
  int lag_order = 1;
  Matrix y_current;      // N x (T-h)
  PanelTensor y_lagged;  // N x (T-h) x h
};

LaggedView lag_view(const PanelDataset& data, int h);

/// out[i][s] = series[i][s+1] - series[i][s]; requires T >= 2.
Matrix first_difference(const Matrix& series);

}  // namespace dmdfm
