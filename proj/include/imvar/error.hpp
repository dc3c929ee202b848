#pragma once

#include <stdexcept>
#include <string>

namespace imvar {

enum class ErrorCode {
  NonPositiveOrientation,
  DegenerateBBox,
  InvalidStructure,
  EmptySimplex,
  KindMismatch,
  NonFinite,
  ZeroDensity,
  ModeMismatch,
  Infeasible,
  MaxIterations,
  InvalidRatio,
  FoldedRegion,
  ParseError,
  EmptyInput,
  InvalidArgument,
  IoError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveOrientation: return "NonPositiveOrientation";
    case ErrorCode::DegenerateBBox: return "DegenerateBBox";
    case ErrorCode::InvalidStructure: return "InvalidStructure";
    case ErrorCode::EmptySimplex: return "EmptySimplex";
    case ErrorCode::KindMismatch: return "KindMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ZeroDensity: return "ZeroDensity";
    case ErrorCode::ModeMismatch: return "ModeMismatch";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::InvalidRatio: return "InvalidRatio";
    case ErrorCode::FoldedRegion: return "FoldedRegion";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace imvar
