#pragma once

#include <stdexcept>
#include <string>

namespace taskaug {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
struct ParseError : Error {
  ParseError(const std::string& msg, long line_number = -1)
      : Error(line_number >= 0 ? msg + " (line " + std::to_string(line_number) + ")" : msg),
        line(line_number) {}
  long line;
};

/// Input data violates a precondition (missing labels, too few sessions, ...).
struct DataError : Error {
  using Error::Error;
};

/// Caller misuse: invalid configuration or shape mismatch.
struct UsageError : Error {
  using Error::Error;
};

/// Non-finite values encountered mid-computation (exploding parameters).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace taskaug
