#pragma once

#include <array>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "eegtask/matrix.hpp"
#include "eegtask/recording.hpp"

namespace eegtask {

struct FilterSpec {
  double low_hz = 0.1;
  double high_hz = 70.0;
  int order = 4;  // order of the low-pass prototype; the band-pass has 2*order poles
  bool zero_phase = true;
};

/// Second-order section {b0, b1, b2, a0, a1, a2}, a0 == 1.
using SosSection = std::array<double, 6>;

/// Digital Butterworth band-pass by bilinear transform of the analog
/// prototype (edges prewarped), normalized to unit gain at the geometric
/// band center. Throws BandOutOfRange or UnstableFilter.
std::vector<SosSection> design_butterworth_bandpass(const FilterSpec& spec, double sample_rate_hz);

/// Complex frequency response of a section cascade at `freq_hz`.
std::complex<double> sos_response(std::span<const SosSection> sos, double freq_hz, double sample_rate_hz);

/// Causal cascade filtering, direct form II transposed. `initial_scale`
/// multiplies the step-response steady-state initial conditions (0 gives a
/// zero initial state).
std::vector<double> sos_filter(std::span<const SosSection> sos, std::span<const double> x,
                               double initial_scale);

/// Zero-phase filtering. The signal is extended at each end by odd
/// reflection of `pad` samples, then filtered forward-backward and
/// backward-forward; the two passes are averaged so the result commutes
/// exactly with time reversal. Net magnitude response is |H|^2.
std::vector<double> zero_phase_filter(std::span<const SosSection> sos, std::span<const double> x,
                                      std::size_t pad);

/// Filters every channel independently. Zero-phase filtering pads
/// 3 * order samples at each end.
Recording bandpass_filter(const Recording& r, const FilterSpec& spec);

/// Fixed 2-second analysis window.
struct Epoch {
  std::string subject_id;
  std::vector<std::string> channel_labels;
  Matrix<float> samples;  // [channel][kEpochSamples]
  Difficulty difficulty = Difficulty::None;
};

/// Splits every labeled event into non-overlapping 512-sample windows in
/// onset order; a trailing remainder shorter than one window is dropped.
std::vector<Epoch> epoch_signal(const Recording& r);

struct RejectionResult {
  std::vector<Epoch> kept;
  std::size_t dropped_count = 0;
};

/// Drops an epoch when any channel's peak-to-peak amplitude exceeds the
/// threshold (or holds a non-finite sample). Kept order is preserved.
RejectionResult reject_artifacts(std::vector<Epoch> epochs, double ptp_threshold_uv = 200.0);

}  // namespace eegtask
