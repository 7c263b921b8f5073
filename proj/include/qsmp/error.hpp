#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qsmp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A problem specification produced non-finite values or inconsistent data.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a time-stepping solver; carries the grid step.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Least-squares system could not be solved.
class IllConditionedError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or expression; carries a 1-based source location.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0, int column = 0)
      : Error(format(what, line, column)), line_(line), column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& what, int line, int column) {
    if (line <= 0) return what;
    return "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what;
  }

  int line_;
  int column_;
};

}  // namespace qsmp
