#pragma once

#include <stdexcept>
#include <string>

namespace dfd {

// Raised when a caller breaks an operation's preconditions (shape mismatch,
// invalid configuration, malformed spec). Maps to CLI exit code 1.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Raised for unreadable/unwritable files and malformed on-disk formats.
// Maps to CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace dfd
