#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stochlift {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  non_finite,
  singular,
  precondition,
  io,
  config,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library. The code is what the CLI reports
/// in its machine-readable error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace stochlift
