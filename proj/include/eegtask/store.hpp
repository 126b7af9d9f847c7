#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "eegtask/dsp.hpp"
#include "eegtask/experiments.hpp"
#include "eegtask/spectral.hpp"

namespace eegtask {

/// Cleaned epochs: `<stem>.json` (per-epoch subject, label, channel labels,
/// subject scores) plus `<stem>.f32` holding all epochs back to back,
/// little-endian f32 [epoch][channel][sample].
void save_epochs(std::span<const Epoch> epochs, std::span<const SubjectScore> scores,
                 const std::filesystem::path& header_path);

struct EpochStore {
  std::vector<Epoch> epochs;
  std::vector<SubjectScore> scores;
};

EpochStore load_epochs(const std::filesystem::path& header_path);

/// Feature matrix file: one text header line of comma-separated feature
/// names "A-B:band" followed by ",label", then little-endian f32 rows of
/// n_features values and the label. A `.meta.json` sidecar carries band
/// edges, per-row subjects and subject scores.
void save_features(const FeatureMatrix& fm, std::span<const SubjectScore> scores, const std::filesystem::path& path);

struct FeatureStore {
  FeatureMatrix matrix;
  std::vector<SubjectScore> scores;
};

FeatureStore load_features(const std::filesystem::path& path);

}  // namespace eegtask
