#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace osn {

// Raised when a caller breaks an operation's precondition (bad shape, out of
// range index, degenerate input). Distinct from I/O and format errors.
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Storage precision. Arithmetic always runs in double; f32 runs round
// trainable state to the nearest float after every update and archive it as
// 4-byte floats.
enum class Precision { f32, f64 };

const char* to_string(Precision p);
Precision parse_precision(const std::string& s);

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace osn
