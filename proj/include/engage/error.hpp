#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace engage {

enum class ErrorKind {
  // metrics
  IllegalVerdict,
  EmptyInput,
  MissingType,
  LengthMismatch,
  // gateway
  BackendUnavailable,
  AuthFailure,
  UnscriptedRequest,
  // question generation
  MalformedGeneration,
  SelectionMismatch,
  NoValidCandidates,
  ModeViolation,
  // annotation
  InsufficientAnnotators,
  NotAssigned,
  DuplicateDecision,
  IncompleteAnnotations,
  // imagination
  EmptyResponse,
  DegeneratePair,
  FailureRateExceeded,
  // datasets and training
  SourceEmpty,
  MissingFeedback,
  RenderingFailure,
  NonFiniteLoss,
  DecodeFailure,
  // evaluation
  MissingTierCoverage,
  SampleTooLarge,
  UnparseableWinner,
  EmptyGroup,
  // shared
  ValidationError,
  IllegalTransition,
  IoError,
  UnknownCommand,
  ConfigInvalid,
};

std::string_view to_string(ErrorKind kind);

inline std::ostream& operator<<(std::ostream& os, ErrorKind kind) { return os << to_string(kind); }

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace engage
