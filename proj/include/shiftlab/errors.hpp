#pragma once

#include <stdexcept>
#include <string>

namespace shiftlab {

// Root of every error the library raises. Callers that only care about
// "something numerical went wrong" can catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function (x <= 0 under log
// utility, y outside a coefficient table).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Query outside a grid's bounding box.
class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

// Contract violation on an argument that is checkable up front.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A derivative record was used with an identity that needs a different
// scaling scope.
class ScopeMismatchError : public Error {
 public:
  using Error::Error;
};

// A user-supplied function returned a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class SingularCoefficientError : public Error {
 public:
  SingularCoefficientError(const std::string& what, double lo, double hi)
      : Error(what), lo_(lo), hi_(hi) {}
  double bracket_lo() const noexcept { return lo_; }
  double bracket_hi() const noexcept { return hi_; }

 private:
  double lo_;
  double hi_;
};

class DegenerateCurvatureError : public Error {
 public:
  using Error::Error;
};

class StabilityError : public Error {
 public:
  StabilityError(const std::string& what, double cfl) : Error(what), cfl_(cfl) {}
  double cfl() const noexcept { return cfl_; }

 private:
  double cfl_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

// Configuration rejected before any computation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace shiftlab
