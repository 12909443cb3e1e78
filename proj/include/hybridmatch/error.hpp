#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hm {

enum class ErrorKind {
  MalformedFile,
  DimensionMismatch,
  DanglingReference,
  NonFiniteValue,
  IoFailure,
  InvalidBounds,
  WrongRole,
  UnknownEntity,
  EmptyTrainingSet,
  EmptyRetrievalList,
  EmptyList,
  ZeroVector,
  ShapeMismatch,
  BadTimestep,
  DegenerateGrid,
  EmptyBallots,
  NotNormalized,
  EmptyScores,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidBounds: return "InvalidBounds";
    case ErrorKind::WrongRole: return "WrongRole";
    case ErrorKind::UnknownEntity: return "UnknownEntity";
    case ErrorKind::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorKind::EmptyRetrievalList: return "EmptyRetrievalList";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadTimestep: return "BadTimestep";
    case ErrorKind::DegenerateGrid: return "DegenerateGrid";
    case ErrorKind::EmptyBallots: return "EmptyBallots";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::EmptyScores: return "EmptyScores";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Domain error raised by every library operation. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hm
