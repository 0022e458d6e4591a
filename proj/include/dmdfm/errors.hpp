#pragma once

#include <stdexcept>
#include <string>

namespace dmdfm {

/// Base class for all library errors. `kind()` is a stable machine-readable
/// tag; the message carries the human-readable details.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// Invalid or inconsistent input data / arguments (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during estimation (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline DataError missing_cell(const std::string& msg) { return {"MissingCell", msg}; }
inline DataError duplicate_cell(const std::string& msg) { return {"DuplicateCell", msg}; }
inline DataError non_numeric_value(const std::string& msg) { return {"NonNumericValue", msg}; }
inline DataError too_few_periods(const std::string& msg) { return {"TooFewPeriods", msg}; }
inline DataError too_few_individuals(const std::string& msg) { return {"TooFewIndividuals", msg}; }
inline DataError lag_too_large(const std::string& msg) { return {"LagTooLarge", msg}; }
inline DataError k_too_large(const std::string& msg) { return {"KTooLarge", msg}; }
inline DataError dimension_mismatch(const std::string& msg) { return {"DimensionMismatch", msg}; }
inline DataError missing_future_regressors(const std::string& msg) {
  return {"MissingFutureRegressors", msg};
}
inline NumericalError rank_deficient_design(const std::string& msg) {
  return {"RankDeficientDesign", msg};
}
inline NumericalError singular_weight(const std::string& msg) { return {"SingularWeight", msg}; }
inline NumericalError non_convergence(const std::string& msg) { return {"NonConvergence", msg}; }

/// Warning sink for non-fatal numerical fallbacks (pseudo-inverse weights
/// etc.). Replaceable so batch drivers can count instead of printing.
using WarnHandler = void (*)(const std::string&);
void set_warn_handler(WarnHandler handler);  // nullptr restores the default
WarnHandler warn_handler();
void warn(const std::string& msg);

}  // namespace dmdfm
