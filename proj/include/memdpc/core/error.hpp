#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace memdpc {

enum class ErrorKind {
  // data ingestion
  InsufficientFrames,
  NonFiniteInput,
  InvalidPolicy,
  IoError,
  InvalidIndex,
  // model shapes and numerics
  ShapeMismatch,
  DimensionMismatch,
  EmptySequence,
  NonFiniteLogits,
  ZeroVector,
  TooFewBlocks,
  DegenerateBatch,
  LengthMismatch,
  // training
  DivergedTraining,
  DataExhausted,
  // checkpoints
  CorruptArchive,
  MissingParameter,
  UnexpectedParameter,
  ConfigMismatch,
  // evaluation
  InsufficientClasses,
  ZeroNormEmbedding,
  MissingTimestamp,
  ClipTooShort,
  // cli
  ConfigError,
  Internal,
};

std::string_view to_string(ErrorKind kind);

/// Process exit code associated with an error kind (ConfigError=2,
/// DataError=3, TrainingDiverged=4, everything else=1).
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace memdpc
