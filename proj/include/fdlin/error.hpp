#pragma once

#include <stdexcept>
#include <string>

namespace fdlin {

/// Invalid configuration or out-of-contract argument.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A generated signal would exceed its amplitude bound.
class AmplitudeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A bracketing/bisection search (gain selection, model calibration) failed.
class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares tone fitting failed (rank-deficient basis).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric is undefined for its input (zero energy, no spur bins).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A model violates a structural invariant.
class StructureError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The regularized normal matrix could not be factored.
class SingularMatrixError : public DesignError {
 public:
  SingularMatrixError(const std::string& what, double smallest_pivot)
      : DesignError(what), smallest_pivot_(smallest_pivot) {}
  double smallest_pivot() const noexcept { return smallest_pivot_; }

 private:
  double smallest_pivot_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fdlin
