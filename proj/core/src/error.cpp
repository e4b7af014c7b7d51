#include "nvsed/error.hpp"

namespace nvsed {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTooShort: return "too_short";
    case ErrorCode::kRateMismatch: return "rate_mismatch";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kEnrollmentFailed: return "enrollment_failed";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kSessionClosed: return "session_closed";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace nvsed
