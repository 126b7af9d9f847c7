#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eegtask {

enum class ErrorCode {
  MissingFile,
  LengthMismatch,
  UnknownChannelLabel,
  DuplicateChannelLabel,
  OverlappingEvents,
  InvalidManifest,
  IoFailure,
  ZeroTestSet,
  InvalidReport,
  UnstableFilter,
  BandOutOfRange,
  NoEvents,
  TooShort,
  MissingElectrode,
  DegenerateLabels,
  InvalidArgument,
  DimensionMismatch,
  ShapeMismatch,
  EmptyClass,
  TooFewEpochs,
  SingleSubject,
  InvalidPlantTarget,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. Every failure the library
/// reports goes through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace eegtask
