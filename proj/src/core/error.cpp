#include "engage/error.hpp"

namespace engage {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IllegalVerdict: return "IllegalVerdict";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MissingType: return "MissingType";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::UnscriptedRequest: return "UnscriptedRequest";
    case ErrorKind::MalformedGeneration: return "MalformedGeneration";
    case ErrorKind::SelectionMismatch: return "SelectionMismatch";
    case ErrorKind::NoValidCandidates: return "NoValidCandidates";
    case ErrorKind::ModeViolation: return "ModeViolation";
    case ErrorKind::InsufficientAnnotators: return "InsufficientAnnotators";
    case ErrorKind::NotAssigned: return "NotAssigned";
    case ErrorKind::DuplicateDecision: return "DuplicateDecision";
    case ErrorKind::IncompleteAnnotations: return "IncompleteAnnotations";
    case ErrorKind::EmptyResponse: return "EmptyResponse";
    case ErrorKind::DegeneratePair: return "DegeneratePair";
    case ErrorKind::FailureRateExceeded: return "FailureRateExceeded";
    case ErrorKind::SourceEmpty: return "SourceEmpty";
    case ErrorKind::MissingFeedback: return "MissingFeedback";
    case ErrorKind::RenderingFailure: return "RenderingFailure";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DecodeFailure: return "DecodeFailure";
    case ErrorKind::MissingTierCoverage: return "MissingTierCoverage";
    case ErrorKind::SampleTooLarge: return "SampleTooLarge";
    case ErrorKind::UnparseableWinner: return "UnparseableWinner";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::IllegalTransition: return "IllegalTransition";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::UnknownCommand: return "UnknownCommand";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

}  // namespace engage
