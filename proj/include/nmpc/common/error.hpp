#pragma once

#include <stdexcept>
#include <string>

namespace nmpc {

// Base class for all errors thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Cholesky factorization hit a non-positive pivot.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(int pivot_index, double pivot_value)
      : Error("matrix not positive definite at pivot " + std::to_string(pivot_index) +
              " (value " + std::to_string(pivot_value) + ")"),
        pivot_index(pivot_index),
        pivot_value(pivot_value) {}
  int pivot_index;
  double pivot_value;
};

class SingularMatrixError : public Error {
 public:
  explicit SingularMatrixError(int index)
      : Error("matrix singular at index " + std::to_string(index)), index(index) {}
  int index;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Expression evaluation left the domain of an elementary function.
class DomainEvalError : public Error {
 public:
  DomainEvalError(int node_index, const std::string& what_op)
      : Error("domain error in node " + std::to_string(node_index) + " (" + what_op + ")"),
        node_index(node_index) {}
  int node_index;
};

class NewtonNoConvergenceError : public Error {
 public:
  NewtonNoConvergenceError(int iterations, double residual)
      : Error("Newton did not converge after " + std::to_string(iterations) +
              " iterations (residual " + std::to_string(residual) + ")"),
        iterations(iterations),
        residual(residual) {}
  int iterations;
  double residual;
};

class SingularStageJacobianError : public Error {
 public:
  using Error::Error;
};

class NumericalFailureError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StiffnessSuspectedError : public Error {
 public:
  using Error::Error;
};

}  // namespace nmpc
