#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nnprat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched tensor extents (matmul inner dims, elementwise shapes, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-range class label or row index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition (non-scalar loss, k >= n, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid specification object (AttackSpec, NetworkSpec, ...).
class SpecError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: non-convergence, non-finite intermediate.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Zero-norm feature row where projection removal needs a direction.
class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

// Metric has no defined value on this input (single class, zero variance).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Training run exceeded the skipped-batch budget.
class RunAbortedError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CountMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Mismatched summary.csv schemas in `compare`.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Config validation failure; carries every violation found.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : Error(join(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string all = "invalid config:";
    for (const auto& s : issues) {
      all += "\n  - " + s;
    }
    return all;
  }

  std::vector<std::string> issues_;
};

}  // namespace nnprat
