#include "eegtask/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "eegtask/dsp.hpp"
#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"
#include "eegtask/seed.hpp"
#include "eegtask/spectral.hpp"

namespace eegtask {

namespace {

std::array<std::vector<std::size_t>, kNumClasses> by_class(std::span<const int> labels,
                                                           std::span<const std::size_t> indices) {
  std::array<std::vector<std::size_t>, kNumClasses> out;
  auto add = [&](std::size_t i) {
    const int y = labels[i];
    if (y < 0 || y >= kNumClasses) throw Error(ErrorCode::InvalidArgument, "label out of range");
    out[static_cast<std::size_t>(y)].push_back(i);
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i) add(i);
  } else {
    for (auto i : indices) add(i);
  }
  return out;
}

std::vector<std::size_t> balance_subset(std::span<const int> labels, std::span<const std::size_t> indices,
                                        std::uint64_t seed) {
  auto groups = by_class(labels, indices);
  std::size_t minority = SIZE_MAX;
  for (const auto& g : groups) {
    if (!g.empty()) minority = std::min(minority, g.size());
  }
  if (minority == SIZE_MAX) throw Error(ErrorCode::EmptyClass, "no epochs to balance");
  Rng rng(seed);
  std::vector<std::size_t> kept;
  for (auto& g : groups) {
    if (g.empty()) continue;
    std::vector<std::size_t> pick(g.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    for (std::size_t k = 0; k < minority; ++k) kept.push_back(g[pick[k]]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<std::size_t> balance_classes(std::span<const int> labels, std::uint64_t seed) {
  return balance_subset(labels, {}, seed);
}

SplitPlan split_subject_independent(std::span<const int> labels, double train_fraction, std::uint64_t seed,
                                    std::span<const std::size_t> indices) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "train fraction must lie in (0, 1)");
  }
  auto groups = by_class(labels, indices);
  Rng rng(seed);
  Fold fold;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    if (g.size() < 2) {
      throw Error(ErrorCode::TooFewEpochs, "class " + std::to_string(c) + " has fewer than 2 epochs");
    }
    std::shuffle(g.begin(), g.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(g.size())));
    fold.train.insert(fold.train.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_train));
    fold.test.insert(fold.test.end(), g.begin() + static_cast<std::ptrdiff_t>(n_train), g.end());
  }
  std::sort(fold.train.begin(), fold.train.end());
  std::sort(fold.test.begin(), fold.test.end());
  return {Scheme::SubjectIndependent, {std::move(fold)}};
}

SplitPlan split_loso(std::span<const int> labels, std::span<const std::string> subjects, std::uint64_t seed) {
  if (labels.size() != subjects.size()) throw Error(ErrorCode::DimensionMismatch, "labels and subjects differ");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& s : subjects) {
    if (slot.emplace(s, order.size()).second) order.push_back(s);
  }
  if (order.size() < 2) throw Error(ErrorCode::SingleSubject, "leave-one-subject-out needs at least 2 subjects");

  SplitPlan plan{Scheme::SubjectDependent, {}};
  for (std::size_t f = 0; f < order.size(); ++f) {
    Fold fold;
    std::vector<std::size_t> train_all;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      (slot[subjects[i]] == f ? fold.test : train_all).push_back(i);
    }
    fold.train = balance_subset(labels, train_all, derive_seed(seed, f));
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

ExpertisePartition label_expertise(std::span<const SubjectScore> subjects, const ExpertiseRule& rule) {
  std::vector<double> mot, vs;
  for (const auto& s : subjects) {
    mot.push_back(s.mot_score);
    vs.push_back(s.vs_score);
  }
  ExpertisePartition out;
  out.mot_threshold = rule.mot_threshold.value_or(median(mot));
  out.vs_threshold = rule.vs_threshold.value_or(median(vs));
  for (const auto& s : subjects) {
    const bool expert = s.mot_score >= out.mot_threshold && s.vs_score >= out.vs_threshold;
    (expert ? out.experts : out.novices).push_back(s.subject_id);
  }
  return out;
}

std::vector<SubjectScore> subject_scores(std::span<const Recording> recordings) {
  std::vector<SubjectScore> out;
  std::set<std::string> seen;
  for (const auto& r : recordings) {
    if (seen.insert(r.subject_id).second) out.push_back({r.subject_id, r.mot_score, r.vs_score});
  }
  return out;
}

EvalReport evaluate(ClassifierKind classifier, std::span<const int> labels, const PlanSource& plans,
                    const FitPredict& fit_predict, std::size_t n_repeats, std::uint64_t seed) {
  if (n_repeats < 1) throw Error(ErrorCode::InvalidArgument, "n_repeats must be at least 1");
  EvalReport rep;
  rep.classifier = classifier;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    const auto repeat_seed = derive_seed(seed, r);
    const auto plan = plans(repeat_seed);
    rep.scheme = plan.scheme;
    std::size_t correct = 0, total = 0;
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
      const auto& fold = plan.folds[f];
      const auto pred = fit_predict(fold.train, fold.test, derive_seed(repeat_seed, f));
      if (pred.size() != fold.test.size()) {
        throw Error(ErrorCode::DimensionMismatch, "classifier returned the wrong number of predictions");
      }
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const int y = labels[fold.test[i]];
        const int p = pred[i];
        if (p < 0 || p >= kNumClasses) throw Error(ErrorCode::InvalidArgument, "prediction out of range");
        ++rep.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
        correct += y == p ? 1 : 0;
      }
      total += pred.size();
    }
    if (total == 0) throw Error(ErrorCode::ZeroTestSet, "repeat " + std::to_string(r) + " has no test epochs");
    rep.repeat_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(total));
  }
  double mean = 0.0;
  for (double a : rep.repeat_accuracies) mean += a;
  mean /= static_cast<double>(n_repeats);
  double var = 0.0;
  for (double a : rep.repeat_accuracies) var += (a - mean) * (a - mean);
  rep.accuracy_mean = mean;
  rep.accuracy_std = std::sqrt(var / static_cast<double>(n_repeats));
  return rep;
}

std::vector<Recording> synth_generate(const SynthConfig& cfg) {
  if (cfg.n_subjects < 1 || cfg.epochs_per_class < 1 || !(cfg.snr >= 0.0) || !(cfg.noise_sd_uv > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "synthetic cohort needs subjects, epochs and positive noise");
  }
  const auto bands = default_bands();
  struct Plant {
    std::size_t a, b;
    double freq;
  };
  std::array<Plant, kNumClasses> plants{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& t = cfg.planted[c];
    const auto ia = montage_index(t.channel_a);
    const auto ib = montage_index(t.channel_b);
    const auto band = std::find_if(bands.begin(), bands.end(), [&](const BandSpec& b) { return b.name == t.band; });
    if (!ia || !ib || *ia == *ib || band == bands.end()) {
      throw Error(ErrorCode::InvalidPlantTarget,
                  "planted target " + t.channel_a + "-" + t.channel_b + ":" + t.band + " is not a montage pair/band");
    }
    plants[c] = {*ia, *ib, 0.5 * (band->lo_hz + band->hi_hz)};
  }
  const std::size_t n_experts = cfg.n_experts.value_or((cfg.n_subjects + 1) / 2);
  if (n_experts > cfg.n_subjects) throw Error(ErrorCode::InvalidArgument, "more experts than subjects");

  const auto labels = montage_labels();
  const std::size_t n_ch = labels.size();
  const std::size_t event_len = cfg.epochs_per_class * kEpochSamples;
  const std::size_t n = kNumClasses * event_len;
  const auto noise_filter =
      design_butterworth_bandpass({cfg.noise_low_hz, cfg.noise_high_hz, 4, true}, kSampleRateHz);

  Rng cohort_rng(derive_seed(cfg.seed, "cohort"));
  std::vector<std::size_t> subject_order(cfg.n_subjects);
  std::iota(subject_order.begin(), subject_order.end(), 0);
  std::shuffle(subject_order.begin(), subject_order.end(), cohort_rng);
  std::vector<bool> is_expert(cfg.n_subjects, false);
  for (std::size_t k = 0; k < n_experts; ++k) is_expert[subject_order[k]] = true;

  std::vector<Recording> out;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    Rng rng(derive_seed(derive_seed(cfg.seed, "subject"), s));
    Recording r;
    char id[16];
    std::snprintf(id, sizeof id, "S%02zu", s + 1);
    r.subject_id = id;
    r.sample_rate_hz = static_cast<int>(kSampleRateHz);
    r.channel_labels = labels;
    r.samples = Matrix<float>(n_ch, n);

    std::uniform_real_distribution<double> high(0.6, 1.0), low(0.0, 0.4);
    r.mot_score = is_expert[s] ? high(rng) : low(rng);
    r.vs_score = is_expert[s] ? high(rng) : low(rng);

    std::array<int, kNumClasses> class_order{0, 1, 2};
    std::shuffle(class_order.begin(), class_order.end(), rng);
    for (std::size_t e = 0; e < kNumClasses; ++e) {
      r.events.push_back({static_cast<std::int64_t>(e * event_len), static_cast<std::int64_t>((e + 1) * event_len),
                          static_cast<Difficulty>(class_order[e])});
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(n);
    Matrix<double> signal(n_ch, n);
    for (std::size_t c = 0; c < n_ch; ++c) {
      for (auto& v : x) v = gauss(rng);
      auto y = zero_phase_filter(noise_filter, x, 12);
      double mean = 0.0, sq = 0.0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(n);
      for (double v : y) sq += (v - mean) * (v - mean);
      const double k = cfg.noise_sd_uv / std::sqrt(sq / static_cast<double>(n));
      for (std::size_t t = 0; t < n; ++t) signal(c, t) = (y[t] - mean) * k;
    }

    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    const double amplitude = cfg.snr * cfg.noise_sd_uv;
    for (std::size_t e = 0; e < kNumClasses; ++e) {
      const auto& p = plants[static_cast<std::size_t>(class_order[e])];
      for (std::size_t k = 0; k < cfg.epochs_per_class; ++k) {
        const double phase = phase_dist(rng);
        const std::size_t start = e * event_len + k * kEpochSamples;
        for (std::size_t t = 0; t < kEpochSamples; ++t) {
          const double v =
              amplitude * std::sin(2.0 * std::numbers::pi * p.freq * static_cast<double>(t) / kSampleRateHz + phase);
          signal(p.a, start + t) += v;
          signal(p.b, start + t) += v;
        }
      }
    }
    for (std::size_t i = 0; i < signal.data().size(); ++i) r.samples.data()[i] = static_cast<float>(signal.data()[i]);
    validate(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace eegtask
