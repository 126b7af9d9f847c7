#include "eegtask/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"

namespace eegtask {

using cplx = std::complex<double>;

std::vector<SosSection> design_butterworth_bandpass(const FilterSpec& spec, double fs) {
  const double nyquist = fs / 2.0;
  if (!(spec.low_hz > 0.0 && spec.low_hz < spec.high_hz && spec.high_hz < nyquist)) {
    throw Error(ErrorCode::BandOutOfRange, "need 0 < low < high < fs/2");
  }
  if (spec.order < 1) throw Error(ErrorCode::InvalidArgument, "filter order must be positive");
  const int n = spec.order;

  // Prewarped analog band edges.
  const double w1 = 2.0 * fs * std::tan(std::numbers::pi * spec.low_hz / fs);
  const double w2 = 2.0 * fs * std::tan(std::numbers::pi * spec.high_hz / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Low-pass prototype poles -> band-pass poles -> z-plane.
  std::vector<cplx> poles;
  for (int k = 0; k < n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n);
    const cplx p = std::polar(1.0, theta) * (bw / 2.0);
    const cplx disc = std::sqrt(p * p - w0sq);
    for (cplx s : {p + disc, p - disc}) poles.push_back((2.0 * fs + s) / (2.0 * fs - s));
  }
  for (const auto& p : poles) {
    if (std::abs(p) >= 1.0) throw Error(ErrorCode::UnstableFilter, "designed pole on or outside unit circle");
  }

  // Pair conjugates; real poles are paired with each other.
  std::vector<std::pair<cplx, cplx>> pairs;
  std::vector<double> reals;
  for (const auto& p : poles) {
    if (std::abs(p.imag()) <= 1e-12 * std::max(1.0, std::abs(p))) {
      reals.push_back(p.real());
    } else if (p.imag() > 0.0) {
      pairs.emplace_back(p, std::conj(p));
    }
  }
  std::sort(reals.begin(), reals.end());
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) pairs.emplace_back(reals[i], reals[i + 1]);
  if (reals.size() % 2 != 0 || pairs.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::UnstableFilter, "pole pairing failed");
  }

  // Every section has one zero at z = 1 (DC) and one at z = -1 (Nyquist).
  std::vector<SosSection> sos;
  for (const auto& [a, b] : pairs) {
    const cplx sum = a + b;
    const cplx prod = a * b;
    sos.push_back({1.0, 0.0, -1.0, 1.0, -sum.real(), prod.real()});
  }

  const double center = fs / std::numbers::pi * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  const double gain = std::abs(sos_response(sos, center, fs));
  for (int i = 0; i < 3; ++i) sos.front()[i] /= gain;
  return sos;
}

std::complex<double> sos_response(std::span<const SosSection> sos, double freq_hz, double fs) {
  const cplx zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs);
  cplx h = 1.0;
  for (const auto& s : sos) {
    h *= (s[0] + s[1] * zinv + s[2] * zinv * zinv) / (s[3] + s[4] * zinv + s[5] * zinv * zinv);
  }
  return h;
}

std::vector<double> sos_filter(std::span<const SosSection> sos, std::span<const double> x,
                               double initial_scale) {
  std::vector<double> y(x.begin(), x.end());
  double dc_scale = initial_scale;
  for (const auto& s : sos) {
    const double b0 = s[0], b1 = s[1], b2 = s[2], a1 = s[4], a2 = s[5];
    // Steady-state state for a unit step, scaled by the step reaching this section.
    const double dc_gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
    double z2 = (b2 - a2 * dc_gain) * dc_scale;
    double z1 = (dc_gain - b0) * dc_scale;
    dc_scale *= dc_gain;
    for (double& v : y) {
      const double in = v;
      const double out = b0 * in + z1;
      z1 = b1 * in - a1 * out + z2;
      z2 = b2 * in - a2 * out;
      v = out;
    }
  }
  return y;
}

namespace {

std::vector<double> forward_backward(std::span<const SosSection> sos, std::span<const double> x,
                                     std::size_t pad) {
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  auto y = sos_filter(sos, ext, ext.front());
  std::reverse(y.begin(), y.end());
  y = sos_filter(sos, y, y.front());
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

}  // namespace

std::vector<double> zero_phase_filter(std::span<const SosSection> sos, std::span<const double> x,
                                      std::size_t pad) {
  if (x.size() <= pad + 1) throw Error(ErrorCode::TooShort, "signal shorter than filter padding");
  const auto fwd = forward_backward(sos, x, pad);
  std::vector<double> rev(x.rbegin(), x.rend());
  const auto bwd = forward_backward(sos, rev, pad);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * (fwd[i] + bwd[y.size() - 1 - i]);
  return y;
}

Recording bandpass_filter(const Recording& r, const FilterSpec& spec) {
  const auto pad = static_cast<std::size_t>(3 * spec.order);
  if (r.n_samples() <= pad) {
    throw Error(ErrorCode::TooShort, "recording needs more than 3 x order samples");
  }
  const auto sos = design_butterworth_bandpass(spec, r.sample_rate_hz);
  Recording out = r;
  std::vector<double> channel(r.n_samples());
  for (std::size_t c = 0; c < r.n_channels(); ++c) {
    const auto src = r.samples.row(c);
    std::copy(src.begin(), src.end(), channel.begin());
    const auto filtered =
        spec.zero_phase ? zero_phase_filter(sos, channel, pad) : sos_filter(sos, channel, channel.front());
    auto dst = out.samples.row(c);
    std::transform(filtered.begin(), filtered.end(), dst.begin(),
                   [](double v) { return static_cast<float>(v); });
  }
  return out;
}

std::vector<Epoch> epoch_signal(const Recording& r) {
  if (r.events.empty()) throw Error(ErrorCode::NoEvents, "recording " + r.subject_id + " has no events");
  if (r.sample_rate_hz != kSampleRateHz) {
    throw Error(ErrorCode::InvalidArgument, "epoching assumes 256 Hz recordings");
  }
  auto events = r.events;
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.onset_sample < b.onset_sample; });

  std::vector<Epoch> epochs;
  for (const auto& ev : events) {
    const auto len = static_cast<std::size_t>(ev.offset_sample - ev.onset_sample);
    for (std::size_t w = 0; w < len / kEpochSamples; ++w) {
      const auto start = static_cast<std::size_t>(ev.onset_sample) + w * kEpochSamples;
      Epoch e{r.subject_id, r.channel_labels, Matrix<float>(r.n_channels(), kEpochSamples), ev.difficulty};
      for (std::size_t c = 0; c < r.n_channels(); ++c) {
        const auto src = r.samples.row(c).subspan(start, kEpochSamples);
        std::copy(src.begin(), src.end(), e.samples.row(c).begin());
      }
      epochs.push_back(std::move(e));
    }
  }
  return epochs;
}

RejectionResult reject_artifacts(std::vector<Epoch> epochs, double ptp_threshold_uv) {
  if (!(ptp_threshold_uv > 0.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be positive");
  RejectionResult result;
  for (auto& e : epochs) {
    bool bad = false;
    for (std::size_t c = 0; c < e.samples.rows() && !bad; ++c) {
      const auto row = e.samples.row(c);
      if (!std::all_of(row.begin(), row.end(), [](float v) { return std::isfinite(v); })) {
        bad = true;
        break;
      }
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      bad = static_cast<double>(*hi) - static_cast<double>(*lo) > ptp_threshold_uv;
    }
    if (bad) {
      ++result.dropped_count;
    } else {
      result.kept.push_back(std::move(e));
    }
  }
  return result;
}

}  // namespace eegtask
