#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace duodepth {

// Invalid numeric input (non-positive depth, bad bin range, ...).
struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke an interface precondition (shape mismatch, bad dims, ...).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// Numerically unusable input (singular intrinsics, ...).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An operation that needs at least one valid element got none.
struct EmptyDomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Least-squares system is singular. Carries the graceful fallback so the
// pipeline can keep running on pathological inputs.
struct DegenerateFitError : std::runtime_error {
  double fallback_scale;
  double fallback_shift;
  DegenerateFitError(const std::string& msg, double s, double t)
      : std::runtime_error(msg), fallback_scale(s), fallback_shift(t) {}
};

// Malformed file contents; byte_offset points at the first bad byte.
struct ParseError : std::runtime_error {
  std::size_t byte_offset;
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace duodepth
