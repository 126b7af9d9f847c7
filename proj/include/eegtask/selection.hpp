#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "eegtask/matrix.hpp"
#include "eegtask/svm.hpp"

namespace eegtask {

struct RfeConfig {
  std::size_t target_k = 5;
  double drop_fraction = 0.1;  // of the surviving features per iteration, at least one
  std::size_t n_repeats = 10;
  std::uint64_t seed = 0;
  SmoOptions smo{};  // linear one-vs-rest models used for ranking
};

struct SelectionResult {
  /// (feature index, number of repeats in which it survived), most frequent
  /// first, ties by lower index. Only features that survived at least once.
  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  std::vector<std::size_t> selected;  // top target_k of `ranked`
  std::size_t n_repeats = 0;
};

/// Recursive feature elimination. Columns are standardized on `x` (constant
/// columns become zero and rank last); each iteration trains linear
/// class-vs-rest SVMs on the surviving columns, scores every column by the
/// summed squared weights, and removes the lowest-scoring
/// ceil(drop_fraction * surviving) columns, never going below target_k.
/// Returns the surviving column indices in ascending order.
std::vector<std::size_t> rfe_once(const Matrix<double>& x, std::span<const int> labels, const RfeConfig& cfg);

/// Runs rfe_once on n_repeats bootstrap resamples (seeded from cfg.seed) and
/// keeps the most frequent survivors. A single repeat uses the data as given.
SelectionResult rfe_stable(const Matrix<double>& x, std::span<const int> labels, const RfeConfig& cfg);

}  // namespace eegtask
