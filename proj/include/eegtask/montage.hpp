#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace eegtask {

inline constexpr int kSampleRateHz = 256;
inline constexpr std::size_t kEpochSamples = 512;

/// The 20-channel headset montage, in recording order. "Montage order" used
/// for pair naming refers to positions in this array.
inline constexpr std::array<std::string_view, 20> kMontage = {
    "O1", "O2", "P4", "POz", "P3", "Pz", "Cz", "C3", "C4", "Fz",
    "F3", "F4", "T6", "T4",  "F8", "Fp1", "Fp2", "F7", "T5", "T3"};

/// Frontal, parietal, motor and occipital subset used for coherence features.
inline constexpr std::array<std::string_view, 13> kCoherenceElectrodes = {
    "T4", "T3", "O1", "P3", "Pz", "F3", "Fz", "F4", "C4", "P4", "C3", "Cz", "O2"};

std::optional<std::size_t> montage_index(std::string_view label);

std::vector<std::string> montage_labels();
std::vector<std::string> coherence_electrodes();

}  // namespace eegtask
