#include "memdpc/core/error.hpp"

namespace memdpc {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InsufficientFrames: return "InsufficientFrames";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::InvalidPolicy: return "InvalidPolicy";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidIndex: return "InvalidIndex";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::NonFiniteLogits: return "NonFiniteLogits";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::TooFewBlocks: return "TooFewBlocks";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DivergedTraining: return "DivergedTraining";
    case ErrorKind::DataExhausted: return "DataExhausted";
    case ErrorKind::CorruptArchive: return "CorruptArchive";
    case ErrorKind::MissingParameter: return "MissingParameter";
    case ErrorKind::UnexpectedParameter: return "UnexpectedParameter";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::InsufficientClasses: return "InsufficientClasses";
    case ErrorKind::ZeroNormEmbedding: return "ZeroNormEmbedding";
    case ErrorKind::MissingTimestamp: return "MissingTimestamp";
    case ErrorKind::ClipTooShort: return "ClipTooShort";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::Internal: return "InternalError";
  }
  return "InternalError";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::ConfigMismatch:
    case ErrorKind::InvalidPolicy:
      return 2;
    case ErrorKind::InsufficientFrames:
    case ErrorKind::NonFiniteInput:
    case ErrorKind::IoError:
    case ErrorKind::InvalidIndex:
    case ErrorKind::DataExhausted:
    case ErrorKind::CorruptArchive:
    case ErrorKind::MissingParameter:
    case ErrorKind::UnexpectedParameter:
    case ErrorKind::InsufficientClasses:
    case ErrorKind::ZeroNormEmbedding:
    case ErrorKind::MissingTimestamp:
    case ErrorKind::ClipTooShort:
      return 3;
    case ErrorKind::DivergedTraining:
      return 4;
    default:
      return 1;
  }
}

}  // namespace memdpc
