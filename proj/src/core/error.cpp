#include "error.hpp"

namespace flowparts {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegeneratePose: return "degenerate-pose";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kAsset: return "asset";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kIncompatible: return "incompatible";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kUndefinedRegion: return "undefined-region";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace flowparts
