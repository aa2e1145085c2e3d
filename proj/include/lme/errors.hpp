#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lme {

/// Invalid input data: malformed files, failed validation, dimension mismatch.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dispatch could not be solved to the requested tolerance.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A KKT Jacobian was structurally singular (e.g. redundant active rows).
struct SingularJacobian : std::runtime_error {
  std::vector<int> dependent_rows;  // offending rows of the reduced system
  explicit SingularJacobian(const std::string& msg, std::vector<int> rows = {})
      : std::runtime_error(msg), dependent_rows(std::move(rows)) {}
};

}  // namespace lme
