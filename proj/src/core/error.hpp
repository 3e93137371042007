#pragma once

#include <stdexcept>
#include <string>

namespace flowparts {

enum class ErrorCode {
  kInvalidArgument = 1,
  kDegeneratePose,
  kShape,
  kConfig,
  kAsset,
  kIo,
  kIncompatible,
  kNonFinite,
  kUndefinedRegion,
  kInternal,
};

const char* error_code_name(ErrorCode code);

// Single exception type for the core library; the C API maps `code()` onto
// its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace flowparts
