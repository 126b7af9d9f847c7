#include "eegtask/montage.hpp"

#include "eegtask/error.hpp"

namespace eegtask {

std::optional<std::size_t> montage_index(std::string_view label) {
  for (std::size_t i = 0; i < kMontage.size(); ++i) {
    if (kMontage[i] == label) return i;
  }
  return std::nullopt;
}

std::vector<std::string> montage_labels() { return {kMontage.begin(), kMontage.end()}; }

std::vector<std::string> coherence_electrodes() {
  return {kCoherenceElectrodes.begin(), kCoherenceElectrodes.end()};
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownChannelLabel: return "UnknownChannelLabel";
    case ErrorCode::DuplicateChannelLabel: return "DuplicateChannelLabel";
    case ErrorCode::OverlappingEvents: return "OverlappingEvents";
    case ErrorCode::InvalidManifest: return "InvalidManifest";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ZeroTestSet: return "ZeroTestSet";
    case ErrorCode::InvalidReport: return "InvalidReport";
    case ErrorCode::UnstableFilter: return "UnstableFilter";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::MissingElectrode: return "MissingElectrode";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::TooFewEpochs: return "TooFewEpochs";
    case ErrorCode::SingleSubject: return "SingleSubject";
    case ErrorCode::InvalidPlantTarget: return "InvalidPlantTarget";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace eegtask
