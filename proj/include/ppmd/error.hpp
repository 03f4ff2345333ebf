#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppmd {

enum class ErrorCode {
  // configuration
  InvalidArgument,
  Config,
  // data
  MismatchedShape,
  DuplicateParameter,
  LengthMismatch,
  ShapeMismatch,
  InsufficientSamples,
  ZeroMatrix,
  RankTooLarge,
  DegeneratePoints,
  DisconnectedGraph,
  AllZeroDistances,
  ZeroRow,
  EmptyGrid,
  FoldTooSmall,
  TooFewPoints,
  NonMonotoneKnots,
  OutOfDomain,
  DegenerateEmbedding,
  HarmonicCutoff,
  BadGrid,
  Io,
  BadMagic,
  BadVersion,
  TruncatedFile,
  UnsortedParams,
  // numerical
  SingularSystem,
  EigSolveFailure,
  NaNSlope,
};

enum class ErrorCategory { Config, Data, Numerical };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Config: return "Config";
    case ErrorCode::MismatchedShape: return "MismatchedShape";
    case ErrorCode::DuplicateParameter: return "DuplicateParameter";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::DegeneratePoints: return "DegeneratePoints";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::AllZeroDistances: return "AllZeroDistances";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::FoldTooSmall: return "FoldTooSmall";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NonMonotoneKnots: return "NonMonotoneKnots";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorCode::HarmonicCutoff: return "HarmonicCutoff";
    case ErrorCode::BadGrid: return "BadGrid";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadVersion: return "BadVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsortedParams: return "UnsortedParams";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::EigSolveFailure: return "EigSolveFailure";
    case ErrorCode::NaNSlope: return "NaNSlope";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Config:
      return ErrorCategory::Config;
    case ErrorCode::SingularSystem:
    case ErrorCode::EigSolveFailure:
    case ErrorCode::NaNSlope:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ppmd
