#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eegtask/spectral.hpp"

namespace eegtask {

enum class Scheme { SubjectIndependent, SubjectDependent, Expert, Novice };
enum class ClassifierKind { Svm, Cnn };

std::string_view to_string(Scheme s);
std::string_view to_string(ClassifierKind c);
Scheme parse_scheme(std::string_view s);
ClassifierKind parse_classifier(std::string_view s);

struct SelectedFeature {
  std::string pair;  // "Pz-O2"
  BandSpec band;
  std::size_t count = 0;  // repeats in which the feature was selected

  bool operator==(const SelectedFeature&) const = default;
};

using Confusion = std::array<std::array<std::size_t, 3>, 3>;

struct EvalReport {
  Scheme scheme = Scheme::SubjectIndependent;
  ClassifierKind classifier = ClassifierKind::Svm;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // population
  Confusion confusion{};      // rows true class, columns predicted
  std::vector<double> repeat_accuracies;
  std::vector<SelectedFeature> selected_features;

  bool operator==(const EvalReport&) const = default;
};

/// Percent with two decimals, "83.80±1.42".
std::string format_accuracy(double mean, double std);

/// Throws ZeroTestSet for an empty confusion matrix and InvalidReport for
/// accuracies outside [0, 1].
void validate(const EvalReport& rep);

/// Table-style text; parse_report inverts it exactly.
std::string render_report(const EvalReport& rep);
EvalReport parse_report(std::string_view text);

std::string report_json(const EvalReport& rep);
EvalReport report_from_json(std::string_view text);

/// Writes `path` (text) and `path` with extension .json (structured copy).
void write_report(const EvalReport& rep, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace eegtask
