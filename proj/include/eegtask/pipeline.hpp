#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eegtask/dsp.hpp"
#include "eegtask/experiments.hpp"
#include "eegtask/montage.hpp"
#include "eegtask/nn.hpp"
#include "eegtask/report.hpp"
#include "eegtask/selection.hpp"
#include "eegtask/spectral.hpp"
#include "eegtask/svm.hpp"

namespace eegtask {

struct SvmParams {
  double c = 1.0;
  KernelKind kernel = KernelKind::Rbf;
  double gamma = 0.0;  // 0 selects 1 / n_features
};

/// Every knob of the pipeline. Stage seeds derive from `seed` by stage name.
struct PipelineConfig {
  std::filesystem::path dataset_dir = "dataset";
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 42;
  FilterSpec filter{};
  double ptp_threshold_uv = 200.0;
  WelchSpec welch{};
  std::vector<BandSpec> bands = default_bands();
  std::vector<std::string> electrodes = coherence_electrodes();
  RfeConfig rfe{};
  SvmParams svm{};
  TrainConfig cnn{};
  SynthConfig synth{};
  double train_fraction = 2.0 / 3.0;
  std::size_t eval_repeats = 10;
};

/// Strict JSON parsing: unknown keys and ill-typed values throw InvalidConfig;
/// absent keys keep their defaults.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Full configuration as JSON (every key, current values).
std::string config_json(const PipelineConfig& cfg);
/// Throws InvalidConfig when a value violates a component invariant.
void validate(const PipelineConfig& cfg);

/// Per-stage seeds.
std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage);

struct PreprocessResult {
  std::vector<Epoch> epochs;
  std::size_t dropped_count = 0;
};

/// Filter, epoch and reject every recording.
PreprocessResult preprocess(std::span<const Recording> recordings, const PipelineConfig& cfg);

FeatureMatrix compute_features(std::span<const Epoch> epochs, const PipelineConfig& cfg);

SelectionResult select_features(const FeatureMatrix& fm, const PipelineConfig& cfg);

/// Selection frequencies as report rows.
std::vector<SelectedFeature> selection_table(const SelectionResult& sel, std::span<const FeatureKey> index);

/// One-vs-rest SVM on the given feature columns. With `select_in_fold`,
/// columns are instead chosen by rfe_once on each training fold.
FitPredict make_svm_classifier(const FeatureMatrix& fm, std::vector<std::size_t> columns, const PipelineConfig& cfg,
                               bool select_in_fold = false);

/// CNN trained on each training fold, with a stratified validation hold-out
/// from the fold for early stopping.
FitPredict make_cnn_classifier(std::span<const Epoch> epochs, const PipelineConfig& cfg,
                               const NetworkShape& shape = NetworkShape::standard());

/// Plan sources. Subject-independent balances and splits afresh per repeat;
/// LOSO folds are fixed; expert/novice restrict the subject-independent
/// protocol to one group.
PlanSource independent_plans(std::span<const int> labels, const PipelineConfig& cfg);
PlanSource loso_plans(std::span<const int> labels, std::span<const std::string> subjects, const PipelineConfig& cfg);
PlanSource group_plans(std::span<const int> labels, std::span<const std::string> subjects,
                       std::span<const std::string> group, Scheme scheme, const PipelineConfig& cfg);

}  // namespace eegtask
