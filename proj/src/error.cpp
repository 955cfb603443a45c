#include "compressbench/error.hpp"

namespace compressbench {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyPrompt: return "EmptyPrompt";
    case ErrorCode::kInvalidRatio: return "InvalidRatio";
    case ErrorCode::kSpanOutOfRange: return "SpanOutOfRange";
    case ErrorCode::kInvalidAnnotation: return "InvalidAnnotation";
    case ErrorCode::kProfileIncomplete: return "ProfileIncomplete";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kTransientBackend: return "TransientBackendError";
    case ErrorCode::kPermanentBackend: return "PermanentBackendError";
    case ErrorCode::kReplayMiss: return "ReplayMiss";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kInsufficientPrompts: return "InsufficientPrompts";
    case ErrorCode::kEmptyCell: return "EmptyCell";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDegenerateTest: return "DegenerateTest";
    case ErrorCode::kUnidentifiable: return "Unidentifiable";
    case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::kNoBreakpoint: return "NoBreakpoint";
    case ErrorCode::kDivisionByZero: return "DivisionByZero";
    case ErrorCode::kInvalidWeights: return "InvalidWeights";
    case ErrorCode::kUndefinedQualityRatio: return "UndefinedQualityRatio";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kInternal: return "InternalError";
  }
  return "Unknown";
}

}  // namespace compressbench
