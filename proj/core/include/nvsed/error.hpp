#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nvsed {

enum class ErrorCode {
  kTooShort,
  kRateMismatch,
  kFormat,
  kTruncated,
  kShape,
  kVersion,
  kInvalidArgument,
  kEnrollmentFailed,
  kNonFinite,
  kDiverged,
  kSessionClosed,
  kIo,
};

// Stable, machine-parseable name ("too_short", "rate_mismatch", ...).
std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nvsed
