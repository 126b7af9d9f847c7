#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "eegtask/dsp.hpp"
#include "eegtask/matrix.hpp"

namespace eegtask {

struct BandSpec {
  std::string name;
  double lo_hz = 0.0;  // inclusive
  double hi_hz = 0.0;  // exclusive

  bool operator==(const BandSpec&) const = default;
};

/// delta [4,8), low_alpha [8,10), high_alpha [11,13), low_beta [14,22),
/// high_beta [23,35), gamma [36,44).
std::vector<BandSpec> default_bands();

/// Band label as printed in feature tables, e.g. "8-10 Hz".
std::string band_range_label(const BandSpec& band);

enum class WindowKind { Hann };

struct WelchSpec {
  std::size_t segment_len = 256;
  double overlap = 0.5;
  WindowKind window = WindowKind::Hann;
};

std::size_t welch_segment_count(std::size_t n_samples, const WelchSpec& spec);

/// One-sided Welch estimates of two auto-spectra and their cross-spectrum
/// Sxy = mean over segments of X(f) * conj(Y(f)). Density-scaled (units^2/Hz).
struct CrossSpectra {
  std::vector<double> sxx;
  std::vector<double> syy;
  std::vector<std::complex<double>> sxy;
  double bin_hz = 0.0;
  std::size_t n_segments = 0;
};

/// Per segment: mean removal, periodic Hann window, real DFT. Throws
/// TooShort when fewer than two segments fit.
CrossSpectra welch_spectra(std::span<const double> x, std::span<const double> y, const WelchSpec& spec,
                           double sample_rate_hz = 256.0);

/// |Sxy| / sqrt(Sxx * Syy) per bin, in [0, 1]; bins with either auto
/// spectrum below 1e-30 are 0.
std::vector<double> coherence(const CrossSpectra& s);

/// One coherence feature: an electrode pair (a before b in montage order)
/// and a band.
struct FeatureKey {
  std::string channel_a;
  std::string channel_b;
  BandSpec band;

  std::string pair() const { return channel_a + "-" + channel_b; }
  std::string name() const { return pair() + ":" + band.name; }
  bool operator==(const FeatureKey&) const = default;
};

/// Feature ordering: pairs lexicographic by montage position, then bands in
/// the given order. Throws MissingElectrode for labels outside the montage.
std::vector<FeatureKey> feature_index(std::span<const std::string> electrodes, std::span<const BandSpec> bands);

struct FeatureVector {
  std::vector<double> values;
  std::vector<FeatureKey> index;
};

FeatureVector extract_features(const Epoch& e, std::span<const std::string> electrodes,
                               std::span<const BandSpec> bands, const WelchSpec& spec,
                               double sample_rate_hz = 256.0);

/// Batch extraction: one row per epoch, columns follow `index`.
struct FeatureMatrix {
  Matrix<double> values;
  std::vector<FeatureKey> index;
  std::vector<int> labels;
  std::vector<std::string> subjects;
};

FeatureMatrix extract_feature_matrix(std::span<const Epoch> epochs, std::span<const std::string> electrodes,
                                     std::span<const BandSpec> bands, const WelchSpec& spec,
                                     double sample_rate_hz = 256.0);

}  // namespace eegtask
