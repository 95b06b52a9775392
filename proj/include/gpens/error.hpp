#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gpens {

enum class ErrorKind {
  BadMagic,
  TruncatedFile,
  NormViolation,
  DimensionMismatch,
  ModelCountMismatch,
  InsufficientSamples,
  TooFewShots,
  CholeskyFailure,
  NonFiniteGradient,
  LengthMismatch,
  EmptyInput,
  AllBelowThreshold,
  VersionMismatch,
  InvalidArgument,
  InvalidManifest,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every recoverable failure in the library is reported through this type.
/// `detail` carries an optional machine-readable qualifier (a path, a class
/// id, a step index) that the CLI forwards into its JSON error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string detail = {})
      : std::runtime_error(message), kind_(kind), detail_(std::move(detail)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace gpens
