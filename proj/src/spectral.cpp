#include "eegtask/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>

#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"

namespace eegtask {

using cplx = std::complex<double>;

std::vector<BandSpec> default_bands() {
  return {{"delta", 4, 8},     {"low_alpha", 8, 10}, {"high_alpha", 11, 13},
          {"low_beta", 14, 22}, {"high_beta", 23, 35}, {"gamma", 36, 44}};
}

std::string band_range_label(const BandSpec& band) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g-%g Hz", band.lo_hz, band.hi_hz);
  return buf;
}

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class RealDft {
 public:
  explicit RealDft(std::size_t n) : n_(n) {
    std::vector<double> in(n);
    std::vector<cplx> out(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~RealDft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealDft(const RealDft&) = delete;
  RealDft& operator=(const RealDft&) = delete;

  void operator()(std::vector<double>& in, std::vector<cplx>& out) const {
    out.resize(n_ / 2 + 1);
    fftw_execute_dft_r2c(plan_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

  static const RealDft& get(std::size_t n) {
    static std::mutex cache_mutex;
    static std::map<std::size_t, std::unique_ptr<RealDft>> cache;
    std::lock_guard lock(cache_mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealDft>(n);
    return *slot;
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  std::size_t n_;
  fftw_plan plan_;
};

std::size_t segment_step(const WelchSpec& spec) {
  if (spec.segment_len < 2) throw Error(ErrorCode::InvalidArgument, "segment length must be at least 2");
  if (!(spec.overlap >= 0.0 && spec.overlap < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "overlap must lie in [0, 1)");
  }
  const auto overlap_samples = static_cast<std::size_t>(std::lround(spec.overlap * spec.segment_len));
  return std::max<std::size_t>(1, spec.segment_len - overlap_samples);
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

// Windowed DFT of every Welch segment of one channel.
struct SegmentSpectra {
  std::vector<std::vector<cplx>> segments;
};

SegmentSpectra segment_spectra(std::span<const double> x, const WelchSpec& spec, std::span<const double> window) {
  const std::size_t step = segment_step(spec);
  const std::size_t n_seg = welch_segment_count(x.size(), spec);
  const auto& dft = RealDft::get(spec.segment_len);
  SegmentSpectra out;
  out.segments.resize(n_seg);
  std::vector<double> buf(spec.segment_len);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const auto seg = x.subspan(s * step, spec.segment_len);
    const double mean = std::accumulate(seg.begin(), seg.end(), 0.0) / static_cast<double>(seg.size());
    for (std::size_t i = 0; i < seg.size(); ++i) buf[i] = (seg[i] - mean) * window[i];
    dft(buf, out.segments[s]);
  }
  return out;
}

double density_scale(std::span<const double> window, double fs) {
  double sum_sq = 0.0;
  for (double w : window) sum_sq += w * w;
  return 1.0 / (fs * sum_sq);
}

double one_sided_factor(std::size_t k, std::size_t segment_len) {
  return (k == 0 || 2 * k == segment_len) ? 1.0 : 2.0;
}

double auto_spectrum_bin(const SegmentSpectra& a, std::size_t k) {
  double acc = 0.0;
  for (const auto& seg : a.segments) acc += std::norm(seg[k]);
  return acc;
}

cplx cross_spectrum_bin(const SegmentSpectra& a, const SegmentSpectra& b, std::size_t k) {
  double re = 0.0, im = 0.0;
  for (std::size_t s = 0; s < a.segments.size(); ++s) {
    const cplx u = a.segments[s][k], v = b.segments[s][k];
    re += u.real() * v.real() + u.imag() * v.imag();
    im += u.imag() * v.real() - u.real() * v.imag();
  }
  return {re, im};
}

double coherence_value(double sxx, double syy, cplx sxy) {
  if (sxx < 1e-30 || syy < 1e-30) return 0.0;
  return std::clamp(std::abs(sxy) / std::sqrt(sxx * syy), 0.0, 1.0);
}

void check_segments(std::size_t n_samples, const WelchSpec& spec) {
  if (welch_segment_count(n_samples, spec) < 2) {
    throw Error(ErrorCode::TooShort, "Welch estimation needs at least two segments");
  }
}

}  // namespace

std::size_t welch_segment_count(std::size_t n_samples, const WelchSpec& spec) {
  const std::size_t step = segment_step(spec);
  if (n_samples < spec.segment_len) return 0;
  return (n_samples - spec.segment_len) / step + 1;
}

CrossSpectra welch_spectra(std::span<const double> x, std::span<const double> y, const WelchSpec& spec,
                           double fs) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "channels differ in length");
  check_segments(x.size(), spec);
  const auto window = hann(spec.segment_len);
  const auto a = segment_spectra(x, spec, window);
  const auto b = segment_spectra(y, spec, window);

  const std::size_t n_bins = spec.segment_len / 2 + 1;
  const double n_seg = static_cast<double>(a.segments.size());
  const double scale = density_scale(window, fs);
  CrossSpectra out;
  out.bin_hz = fs / static_cast<double>(spec.segment_len);
  out.n_segments = a.segments.size();
  out.sxx.resize(n_bins);
  out.syy.resize(n_bins);
  out.sxy.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double f = scale * one_sided_factor(k, spec.segment_len) / n_seg;
    out.sxx[k] = auto_spectrum_bin(a, k) * f;
    out.syy[k] = auto_spectrum_bin(b, k) * f;
    out.sxy[k] = cross_spectrum_bin(a, b, k) * f;
  }
  return out;
}

std::vector<double> coherence(const CrossSpectra& s) {
  std::vector<double> coh(s.sxx.size());
  for (std::size_t k = 0; k < coh.size(); ++k) coh[k] = coherence_value(s.sxx[k], s.syy[k], s.sxy[k]);
  return coh;
}

std::vector<FeatureKey> feature_index(std::span<const std::string> electrodes, std::span<const BandSpec> bands) {
  std::vector<std::pair<std::size_t, std::string>> ordered;
  for (const auto& label : electrodes) {
    const auto idx = montage_index(label);
    if (!idx) throw Error(ErrorCode::MissingElectrode, "electrode '" + label + "' is not in the montage");
    ordered.emplace_back(*idx, label);
  }
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());
  if (bands.empty()) throw Error(ErrorCode::InvalidArgument, "at least one band is required");
  for (const auto& band : bands) {
    if (!(band.lo_hz < band.hi_hz)) throw Error(ErrorCode::BandOutOfRange, "band " + band.name + " is empty");
  }

  std::vector<FeatureKey> index;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    for (std::size_t j = i + 1; j < ordered.size(); ++j) {
      for (const auto& band : bands) index.push_back({ordered[i].second, ordered[j].second, band});
    }
  }
  return index;
}

namespace {

struct BandBins {
  std::size_t first = 0;
  std::size_t last = 0;  // exclusive
};

std::vector<BandBins> band_bins(std::span<const BandSpec> bands, double bin_hz, std::size_t n_bins) {
  std::vector<BandBins> out;
  for (const auto& band : bands) {
    BandBins b{n_bins, 0};
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= band.lo_hz && f < band.hi_hz) {
        b.first = std::min(b.first, k);
        b.last = k + 1;
      }
    }
    if (b.last <= b.first) {
      throw Error(ErrorCode::BandOutOfRange, "band " + band.name + " contains no frequency bins");
    }
    out.push_back(b);
  }
  return out;
}

// Feature values for one epoch given a precomputed feature index.
std::vector<double> epoch_features(const Epoch& e, std::span<const FeatureKey> index,
                                   std::span<const BandSpec> bands, const WelchSpec& spec, double fs) {
  check_segments(e.samples.cols(), spec);
  const auto window = hann(spec.segment_len);
  const std::size_t n_bins = spec.segment_len / 2 + 1;
  const auto bins = band_bins(bands, fs / static_cast<double>(spec.segment_len), n_bins);

  std::map<std::string, SegmentSpectra> spectra;
  std::vector<double> channel(e.samples.cols());
  auto spectra_of = [&](const std::string& label) -> const SegmentSpectra& {
    auto it = spectra.find(label);
    if (it != spectra.end()) return it->second;
    const auto pos = std::find(e.channel_labels.begin(), e.channel_labels.end(), label);
    if (pos == e.channel_labels.end()) {
      throw Error(ErrorCode::MissingElectrode, "epoch lacks electrode '" + label + "'");
    }
    const auto row = e.samples.row(static_cast<std::size_t>(pos - e.channel_labels.begin()));
    std::copy(row.begin(), row.end(), channel.begin());
    return spectra.emplace(label, segment_spectra(channel, spec, window)).first->second;
  };

  const double scale = density_scale(window, fs) / static_cast<double>(welch_segment_count(e.samples.cols(), spec));
  std::vector<double> bin_scale(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) bin_scale[k] = scale * one_sided_factor(k, spec.segment_len);

  std::vector<double> values(index.size());
  std::vector<double> coh(n_bins);
  for (std::size_t f = 0; f < index.size(); f += bands.size()) {
    const auto& a = spectra_of(index[f].channel_a);
    const auto& b = spectra_of(index[f].channel_b);
    for (std::size_t k = 0; k < n_bins; ++k) {
      coh[k] = coherence_value(auto_spectrum_bin(a, k) * bin_scale[k], auto_spectrum_bin(b, k) * bin_scale[k],
                               cross_spectrum_bin(a, b, k) * bin_scale[k]);
    }
    for (std::size_t band = 0; band < bands.size(); ++band) {
      double sum = 0.0;
      for (std::size_t k = bins[band].first; k < bins[band].last; ++k) sum += coh[k];
      values[f + band] = sum / static_cast<double>(bins[band].last - bins[band].first);
    }
  }
  return values;
}

}  // namespace

FeatureVector extract_features(const Epoch& e, std::span<const std::string> electrodes,
                               std::span<const BandSpec> bands, const WelchSpec& spec, double fs) {
  FeatureVector fv;
  fv.index = feature_index(electrodes, bands);
  fv.values = epoch_features(e, fv.index, bands, spec, fs);
  return fv;
}

FeatureMatrix extract_feature_matrix(std::span<const Epoch> epochs, std::span<const std::string> electrodes,
                                     std::span<const BandSpec> bands, const WelchSpec& spec, double fs) {
  FeatureMatrix out;
  out.index = feature_index(electrodes, bands);
  out.values = Matrix<double>(epochs.size(), out.index.size());
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto v = epoch_features(epochs[i], out.index, bands, spec, fs);
    std::copy(v.begin(), v.end(), out.values.row(i).begin());
    out.labels.push_back(static_cast<int>(epochs[i].difficulty));
    out.subjects.push_back(epochs[i].subject_id);
  }
  return out;
}

}  // namespace eegtask
