#pragma once

#include <stdexcept>
#include <string>

namespace srom {

/// Coarse failure categories. The CLI maps them onto exit codes.
enum class ErrorCategory {
  invalid_argument,  // bad sizes, bad config values
  missing_input,     // files absent, checksum or compatibility failures
  numerical,         // divergence, blowup, ill-posed systems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCategory::invalid_argument, what) {}
};

class MissingInput : public Error {
 public:
  explicit MissingInput(const std::string& what)
      : Error(ErrorCategory::missing_input, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ErrorCategory::numerical, what) {}
};

/// Newton iteration in the full-order solver failed to converge.
class SolverDivergence : public NumericalError {
 public:
  SolverDivergence(long step, const std::string& what)
      : NumericalError(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// A state became non-finite (or left the admissible region).
class Blowup : public NumericalError {
 public:
  Blowup(long step, double norm, const std::string& what)
      : NumericalError(what), step_(step), norm_(norm) {}
  long step() const noexcept { return step_; }
  double norm() const noexcept { return norm_; }

 private:
  long step_;
  double norm_;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw InvalidArgument(what);
}

}  // namespace srom
