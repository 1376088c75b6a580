#include "factrfm/error.hpp"

namespace factrfm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::NotPsd: return "NotPsd";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::SingularKernel: return "SingularKernel";
    case ErrorCode::FactUndefined: return "FactUndefined";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::UnsupportedKernel: return "UnsupportedKernel";
    case ErrorCode::NumericOverflow: return "NumericOverflow";
  }
  return "UnknownError";
}

}  // namespace factrfm
