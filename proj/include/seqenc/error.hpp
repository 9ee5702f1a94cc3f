#pragma once

#include <stdexcept>
#include <string>

namespace seqenc {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kEmptyInput,
  kInsufficientData,
  kBadMagic,
  kBadVersion,
  kTruncatedPayload,
  kIo,
  kFormat,
  kDivergence,
};

// All library failures are reported through this exception; the code lets the
// CLI map failures onto exit statuses without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace seqenc
