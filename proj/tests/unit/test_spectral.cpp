#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"
#include "eegtask/seed.hpp"
#include "eegtask/spectral.hpp"

using namespace eegtask;

namespace {

constexpr double kFs = 256.0;
constexpr double kPi = std::numbers::pi;

std::vector<double> white(std::size_t n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

Epoch noise_epoch(const std::vector<std::string>& labels, Rng& rng) {
  Epoch e;
  e.subject_id = "S01";
  e.channel_labels = labels;
  e.samples = Matrix<float>(labels.size(), kEpochSamples);
  std::normal_distribution<float> d(0.0f, 10.0f);
  for (auto& v : e.samples.data()) v = d(rng);
  return e;
}

std::size_t row_of(const Epoch& e, const std::string& label) {
  return static_cast<std::size_t>(std::find(e.channel_labels.begin(), e.channel_labels.end(), label) -
                                  e.channel_labels.begin());
}

}  // namespace

TEST_CASE("default bands") {
  const auto b = default_bands();
  REQUIRE(b.size() == 6);
  CHECK(b[0] == BandSpec{"delta", 4, 8});
  CHECK(b[1] == BandSpec{"low_alpha", 8, 10});
  CHECK(b[2] == BandSpec{"high_alpha", 11, 13});
  CHECK(b[3] == BandSpec{"low_beta", 14, 22});
  CHECK(b[4] == BandSpec{"high_beta", 23, 35});
  CHECK(b[5] == BandSpec{"gamma", 36, 44});
  CHECK(band_range_label(b[1]) == "8-10 Hz");
}

TEST_CASE("512-sample epoch gives three segments at 1 Hz spacing") {
  CHECK(welch_segment_count(512, {}) == 3);
  Rng rng(1);
  const auto x = white(512, rng);
  const auto s = welch_spectra(x, x, {});
  CHECK(s.n_segments == 3);
  CHECK(s.bin_hz == 1.0);
  CHECK(s.sxx.size() == 129);
}

TEST_CASE("fewer than two segments is too short") {
  std::vector<double> x(256, 1.0);
  CHECK_THROWS_AS(welch_spectra(x, x, {}), Error);
  try {
    welch_spectra(x, x, {});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooShort);
  }
  std::vector<double> y(300, 1.0);
  CHECK_THROWS_AS(welch_spectra(x, y, {}), Error);
}

TEST_CASE("self-spectrum of a 10 Hz sinusoid") {
  std::vector<double> x(512);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(2.0 * kPi * 10.0 * static_cast<double>(t) / kFs);
  const auto s = welch_spectra(x, x, {});
  const auto peak = std::max_element(s.sxx.begin(), s.sxx.end()) - s.sxx.begin();
  CHECK(peak == 10);
  for (std::size_t k = 0; k < s.sxx.size(); ++k) {
    CHECK(s.sxy[k].real() == s.sxx[k]);
    CHECK(s.sxy[k].imag() == 0.0);
  }
}

TEST_CASE("delayed multitone: cross-spectrum phase tracks the delay") {
  // Bin-centered tones three or more bins apart, so Hann leakage never mixes
  // two tones; a 4-sample delay then rotates each tone's bin exactly.
  const std::vector<double> tones = {4, 10, 14, 20, 26, 33, 40, 47};
  constexpr double kDelay = 4.0;
  std::vector<double> x(512, 0.0), y(512, 0.0);
  Rng rng(2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  for (double f : tones) {
    const double ph = phase(rng);
    for (std::size_t t = 0; t < x.size(); ++t) {
      x[t] += std::cos(2.0 * kPi * f * static_cast<double>(t) / kFs + ph);
      y[t] += std::cos(2.0 * kPi * f * (static_cast<double>(t) - kDelay) / kFs + ph);
    }
  }
  const auto s = welch_spectra(x, y, {});
  for (std::size_t k : {10u, 20u, 40u}) {
    CHECK(std::abs(s.sxy[k]) == doctest::Approx(s.sxx[k]).epsilon(1e-9));
    // Sxy = X conj(Y) with Y = X exp(-i w d): phase = +2 pi d k / 256.
    const double expected = 2.0 * kPi * kDelay * static_cast<double>(k) / kFs;
    const double got = std::arg(s.sxy[k]);
    CHECK(std::remainder(got - expected, 2.0 * kPi) == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("identical signals have unit coherence at powered bins") {
  Rng rng(3);
  const auto x = white(512, rng);
  const auto c = coherence(welch_spectra(x, x, {}));
  for (std::size_t k = 1; k < c.size(); ++k) CHECK(std::abs(c[k] - 1.0) <= 1e-9);
}

TEST_CASE("unpowered bins give zero coherence") {
  const std::vector<double> x(512, 0.0);
  Rng rng(4);
  const auto y = white(512, rng);
  for (double v : coherence(welch_spectra(x, y, {}))) CHECK(v == 0.0);
}

TEST_CASE("independent white noise matches the Monte Carlo baseline") {
  // Mean over bins 1..127 and 10^4 independent epochs, numpy reference.
  constexpr double kBaseline = 0.540552;
  Rng rng(5);
  double total = 0.0;
  constexpr int kEpochs = 2000;
  for (int e = 0; e < kEpochs; ++e) {
    const auto x = white(512, rng), y = white(512, rng);
    const auto c = coherence(welch_spectra(x, y, {}));
    double m = 0.0;
    for (std::size_t k = 1; k < 128; ++k) m += c[k];
    total += m / 127.0;
  }
  CHECK(std::abs(total / kEpochs - kBaseline) <= 0.05);
}

TEST_CASE("shared 9 Hz component at 10:1 amplitude gives coherence above 0.9") {
  Rng rng(6);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  double mean = 0.0, worst = 1.0;
  for (int e = 0; e < 100; ++e) {
    const double ph = phase(rng);
    std::vector<double> x(512);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = 10.0 * std::sin(2.0 * kPi * 9.0 * static_cast<double>(t) / kFs + ph);
    auto y = white(512, rng);
    for (std::size_t t = 0; t < x.size(); ++t) y[t] += x[t];
    const double c9 = coherence(welch_spectra(x, y, {}))[9];
    mean += c9 / 100.0;
    worst = std::min(worst, c9);
  }
  CHECK(mean > 0.9);
  CHECK(worst > 0.9);
}

TEST_CASE("coherence is symmetric, bounded and scale invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = white(512, rng), y = white(512, rng);
    for (std::size_t t = 0; t < x.size(); ++t) y[t] += 0.5 * x[t];
    const auto cxy = coherence(welch_spectra(x, y, {}));
    const auto cyx = coherence(welch_spectra(y, x, {}));
    auto xs = x;
    for (auto& v : xs) v *= 37.5;
    const auto cs = coherence(welch_spectra(xs, y, {}));
    for (std::size_t k = 0; k < cxy.size(); ++k) {
      CHECK(cxy[k] == cyx[k]);
      CHECK(cxy[k] >= 0.0);
      CHECK(cxy[k] <= 1.0);
      CHECK(std::abs(cs[k] - cxy[k]) <= 1e-9);
    }
  }
}

TEST_CASE("feature index sizes and ordering") {
  const auto bands = default_bands();
  const auto subset = coherence_electrodes();
  CHECK(subset.size() == 13);
  CHECK(feature_index(subset, bands).size() == 468);
  const auto all = montage_labels();
  CHECK(feature_index(all, bands).size() == 1140);

  const auto idx = feature_index(subset, bands);
  for (const auto& k : idx) CHECK(*montage_index(k.channel_a) < *montage_index(k.channel_b));
  CHECK(idx[0].band.name == "delta");
  CHECK(idx[5].band.name == "gamma");
  CHECK(idx[0].pair() == idx[5].pair());
  CHECK(idx[6].pair() != idx[0].pair());
  for (std::size_t i = 6; i < idx.size(); i += 6) {
    const auto a = std::make_pair(*montage_index(idx[i - 6].channel_a), *montage_index(idx[i - 6].channel_b));
    const auto b = std::make_pair(*montage_index(idx[i].channel_a), *montage_index(idx[i].channel_b));
    CHECK(a < b);
  }
  const std::vector<std::string> bad = {"Pz", "Q9"};
  CHECK_THROWS_AS(feature_index(bad, bands), Error);
}

TEST_CASE("planted Pz-O2 9 Hz component is the largest feature") {
  Rng rng(8);
  auto e = noise_epoch(montage_labels(), rng);
  const auto pz = row_of(e, "Pz"), o2 = row_of(e, "O2");
  for (std::size_t t = 0; t < kEpochSamples; ++t) {
    const float s = static_cast<float>(100.0 * std::sin(2.0 * kPi * 9.0 * static_cast<double>(t) / kFs));
    e.samples(pz, t) += s;
    e.samples(o2, t) += s;
  }
  const auto fv = extract_features(e, coherence_electrodes(), default_bands(), {});
  REQUIRE(fv.values.size() == 468);
  const auto best = std::max_element(fv.values.begin(), fv.values.end()) - fv.values.begin();
  CHECK(fv.index[static_cast<std::size_t>(best)].name() == "O2-Pz:low_alpha");
  CHECK(fv.values[static_cast<std::size_t>(best)] > 0.9);
  for (double v : fv.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("band value is the mean over its half-open bin range") {
  Rng rng(9);
  const std::vector<std::string> labels = {"O1", "O2"};
  const auto e = noise_epoch(labels, rng);
  std::vector<double> x(e.samples.row(0).begin(), e.samples.row(0).end());
  std::vector<double> y(e.samples.row(1).begin(), e.samples.row(1).end());
  const auto c = coherence(welch_spectra(x, y, {}));
  const auto fv = extract_features(e, labels, default_bands(), {});
  CHECK(fv.values[1] == doctest::Approx((c[8] + c[9]) / 2.0).epsilon(1e-12));
  double beta = 0.0;
  for (std::size_t k = 14; k < 22; ++k) beta += c[k] / 8.0;
  CHECK(fv.values[3] == doctest::Approx(beta).epsilon(1e-12));
}

TEST_CASE("extraction is deterministic and needs every electrode") {
  Rng rng(10);
  const auto e = noise_epoch(montage_labels(), rng);
  const auto a = extract_features(e, coherence_electrodes(), default_bands(), {});
  const auto b = extract_features(e, coherence_electrodes(), default_bands(), {});
  CHECK(a.values == b.values);

  const std::vector<std::string> few = {"O1", "O2", "Pz"};
  const auto small = noise_epoch(few, rng);
  try {
    extract_features(small, coherence_electrodes(), default_bands(), {});
    FAIL("missing electrodes accepted");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::MissingElectrode);
  }
}

TEST_CASE("feature matrix rows follow epoch order") {
  Rng rng(11);
  std::vector<Epoch> epochs;
  for (int k = 0; k < 4; ++k) {
    auto e = noise_epoch(coherence_electrodes(), rng);
    e.difficulty = static_cast<Difficulty>(k % 3);
    e.subject_id = "S0" + std::to_string(k);
    epochs.push_back(e);
  }
  const auto fm = extract_feature_matrix(epochs, coherence_electrodes(), default_bands(), {});
  CHECK(fm.values.rows() == 4);
  CHECK(fm.values.cols() == 468);
  CHECK(fm.labels == std::vector<int>{0, 1, 2, 0});
  CHECK(fm.subjects[3] == "S03");
  const auto row2 = extract_features(epochs[2], coherence_electrodes(), default_bands(), {});
  for (std::size_t j = 0; j < 468; ++j) CHECK(fm.values(2, j) == row2.values[j]);
}
