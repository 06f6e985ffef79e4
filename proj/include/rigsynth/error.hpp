#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rigsynth {

enum class ErrorCode {
  InvalidArgument,
  DuplicateIndex,
  DuplicateName,
  AsymmetricPair,
  MissingEyeRole,
  BadMagic,
  Truncated,
  NonFinite,
  ShapeMismatch,
  FeatureFamilyMismatch,
  TimelineMismatch,
  InsufficientSamples,
  DegenerateData,
  Divergence,
  Io,
  Parse,
};

std::string_view to_string(ErrorCode code);

// Process exit status for a failure category: 2 usage, 3 data, 4 numeric.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_code() const noexcept { return exit_code_for(code_); }

 private:
  ErrorCode code_;
};

}  // namespace rigsynth
