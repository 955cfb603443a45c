#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace compressbench {

// Values are part of the C ABI (cb_status); append only.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kEmptyPrompt = 2,
  kInvalidRatio = 3,
  kSpanOutOfRange = 4,
  kInvalidAnnotation = 5,
  kProfileIncomplete = 6,
  kInvalidParams = 7,
  kTransientBackend = 8,
  kPermanentBackend = 9,
  kReplayMiss = 10,
  kConfig = 11,
  kInsufficientPrompts = 12,
  kEmptyCell = 13,
  kInsufficientData = 14,
  kDegenerateTest = 15,
  kUnidentifiable = 16,
  kConvergenceFailure = 17,
  kNoBreakpoint = 18,
  kDivisionByZero = 19,
  kInvalidWeights = 20,
  kUndefinedQualityRatio = 21,
  kIo = 22,
  kParse = 23,
  kInternal = 24,
};

std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace compressbench
