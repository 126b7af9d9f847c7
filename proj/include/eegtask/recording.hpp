#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eegtask/matrix.hpp"

namespace eegtask {

/// Mission difficulty: no adversary, static adversarial team, dynamic team.
enum class Difficulty : int { None = 0, Static = 1, Dynamic = 2 };

inline constexpr int kNumClasses = 3;

struct Event {
  std::int64_t onset_sample = 0;
  std::int64_t offset_sample = 0;  // exclusive
  Difficulty difficulty = Difficulty::None;

  bool operator==(const Event&) const = default;
};

/// One subject's continuous multichannel recording in microvolts.
struct Recording {
  std::string subject_id;
  int sample_rate_hz = 256;
  std::vector<std::string> channel_labels;
  Matrix<float> samples;  // [channel][sample]
  std::vector<Event> events;
  double mot_score = 0.0;  // multi-object tracking, normalized to [0, 1]
  double vs_score = 0.0;   // visual search, normalized to [0, 1]

  std::size_t n_channels() const noexcept { return samples.rows(); }
  std::size_t n_samples() const noexcept { return samples.cols(); }
};

/// Throws Error if any Recording invariant is violated.
void validate(const Recording& r);

/// Reads a JSON manifest and its flat little-endian f32 data file.
Recording load_recording(const std::filesystem::path& manifest_path);

/// Writes `<dir>/<subject_id>.json` and `<dir>/<subject_id>.f32`; returns the
/// manifest path.
std::filesystem::path save_recording(const Recording& r, const std::filesystem::path& dir);

/// Manifests in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_manifests(const std::filesystem::path& dir);

namespace detail {
void write_f32_le(std::ostream& out, std::span<const float> values);
void read_f32_le(std::istream& in, std::span<float> values);
}  // namespace detail

}  // namespace eegtask
