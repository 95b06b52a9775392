#include "gpens/error.hpp"

namespace gpens {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::NormViolation: return "NormViolation";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ModelCountMismatch: return "ModelCountMismatch";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::TooFewShots: return "TooFewShots";
    case ErrorKind::CholeskyFailure: return "CholeskyFailure";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::AllBelowThreshold: return "AllBelowThreshold";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidManifest: return "InvalidManifest";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace gpens
