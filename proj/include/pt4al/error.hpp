#pragma once

#include <stdexcept>
#include <string>

namespace pt4al {

/// Bad input: config, arguments, file contents. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed binary or text file.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failure while doing the work itself. Maps to CLI exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace pt4al
