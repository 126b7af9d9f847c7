#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eegtask/recording.hpp"
#include "eegtask/report.hpp"

namespace eegtask {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct SplitPlan {
  Scheme scheme = Scheme::SubjectIndependent;
  std::vector<Fold> folds;
};

/// Indices (ascending) kept after undersampling every present class to the
/// minority count. Labels must lie in [0, kNumClasses).
std::vector<std::size_t> balance_classes(std::span<const int> labels, std::uint64_t seed);

/// One stratified fold: floor(train_fraction * n_c) of each class trains.
/// `indices` restricts the split to a subset (all rows when empty).
SplitPlan split_subject_independent(std::span<const int> labels, double train_fraction, std::uint64_t seed,
                                    std::span<const std::size_t> indices = {});

/// One fold per subject, in order of first appearance. Training indices are
/// balanced per fold with derive_seed(seed, fold).
SplitPlan split_loso(std::span<const int> labels, std::span<const std::string> subjects, std::uint64_t seed);

struct ExpertiseRule {
  std::optional<double> mot_threshold;  // cohort median when unset
  std::optional<double> vs_threshold;
};

struct SubjectScore {
  std::string subject_id;
  double mot_score = 0.0;
  double vs_score = 0.0;
};

struct ExpertisePartition {
  std::vector<std::string> experts;
  std::vector<std::string> novices;
  double mot_threshold = 0.0;
  double vs_threshold = 0.0;
};

/// Expert iff mot >= mot_threshold and vs >= vs_threshold.
ExpertisePartition label_expertise(std::span<const SubjectScore> subjects, const ExpertiseRule& rule = {});

/// Unique subjects with their scores, in order of first appearance.
std::vector<SubjectScore> subject_scores(std::span<const Recording> recordings);

/// Trains on `train` and returns one predicted label per `test` index.
using FitPredict =
    std::function<std::vector<int>(std::span<const std::size_t> train, std::span<const std::size_t> test,
                                   std::uint64_t seed)>;
/// Builds the plan for one repeat.
using PlanSource = std::function<SplitPlan(std::uint64_t repeat_seed)>;

/// Runs n_repeats repeats with repeat seed derive_seed(seed, r). Each
/// repeat's accuracy pools all of its folds; the confusion matrix pools all
/// repeats (rows true, columns predicted).
EvalReport evaluate(ClassifierKind classifier, std::span<const int> labels, const PlanSource& plans,
                    const FitPredict& fit_predict, std::size_t n_repeats, std::uint64_t seed);

struct PlantTarget {
  std::string channel_a;
  std::string channel_b;
  std::string band;
};

struct SynthConfig {
  std::size_t n_subjects = 6;
  std::size_t epochs_per_class = 60;  // per subject
  double snr = 3.0;                   // planted amplitude / noise standard deviation
  double noise_sd_uv = 10.0;
  double noise_low_hz = 1.0;
  double noise_high_hz = 45.0;
  std::optional<std::size_t> n_experts;  // ceil(n_subjects / 2) when unset
  std::array<PlantTarget, 3> planted{{{"Pz", "O2", "low_alpha"}, {"F3", "C3", "low_beta"}, {"O1", "P4", "gamma"}}};
  std::uint64_t seed = 0;
};

/// One recording per subject over the full montage at 256 Hz, holding three
/// events (one per class, seeded order), each epochs_per_class epochs long.
/// Every channel carries band-limited Gaussian noise; inside an epoch of
/// class c both channels of planted[c] also carry one shared sinusoid at the
/// band's center with a random phase. Experts score in [0.6, 1], novices in
/// [0, 0.4] on both tests.
std::vector<Recording> synth_generate(const SynthConfig& cfg);

}  // namespace eegtask
