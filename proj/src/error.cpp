#include "rigsynth/error.hpp"

namespace rigsynth {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DuplicateIndex: return "DuplicateIndex";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::AsymmetricPair: return "AsymmetricPair";
    case ErrorCode::MissingEyeRole: return "MissingEyeRole";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FeatureFamilyMismatch: return "FeatureFamilyMismatch";
    case ErrorCode::TimelineMismatch: return "TimelineMismatch";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::NonFinite:
    case ErrorCode::Divergence:
      return 4;
    default:
      return 3;
  }
}

}  // namespace rigsynth
