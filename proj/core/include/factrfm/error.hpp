#pragma once

#include <stdexcept>
#include <string>

namespace factrfm {

/// Machine-readable failure categories. The CLI maps these 1:1 onto the
/// "error.code" field of results.json.
enum class ErrorCode {
  InvalidMatrix,
  NotPsd,
  DegenerateInput,
  ShapeError,
  SingularKernel,
  FactUndefined,
  Diverged,
  InvalidConfig,
  ParseError,
  FormatError,
  UnsupportedKernel,
  NumericOverflow,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace factrfm
