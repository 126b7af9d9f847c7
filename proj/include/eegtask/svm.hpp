#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "eegtask/matrix.hpp"

namespace eegtask {

enum class KernelKind { Linear, Rbf };

struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  double gamma = 0.0;  // Rbf only; 0 selects 1 / n_features at training time
};

double kernel_value(const KernelSpec& k, std::span<const double> a, std::span<const double> b);

/// Symmetric kernel matrix of the rows of `x`. The linear case goes through
/// BLAS syrk; the RBF diagonal is exactly 1.
Matrix<double> kernel_matrix(const KernelSpec& k, const Matrix<double>& x);

/// Per-feature standardization fitted on training data. Zero-variance
/// columns keep unit scale so they map to 0.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static Scaler fit(const Matrix<double>& x);
  void apply(std::span<const double> in, std::span<double> out) const;
  Matrix<double> apply(const Matrix<double>& x) const;
};

struct SmoOptions {
  double C = 1.0;
  double tol = 1e-3;
  std::size_t max_passes = 1000;  // iteration budget is max_passes * n
  bool record_objective = false;
};

/// Result of the dual solve. `alpha` are the unsigned multipliers in [0, C].
struct DualSolution {
  std::vector<double> alpha;
  double bias = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  std::vector<double> objective;  // dual objective after every update, if recorded
};

/// Sequential minimal optimization of
///   max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij,  0 <= a_i <= C,  sum a_i y_i = 0.
/// Each step updates the maximal violating pair: the working index with the
/// smallest error E_i over the set that may move up, partnered with the
/// largest E_j over the set that may move down. Stops when
/// max E_j - min E_i < tol, which bounds every KKT violation by tol.
/// Non-empty `weights` give example t the box 0 <= a_t <= C * w_t, which
/// equals training on w_t copies of example t.
DualSolution solve_smo(const Matrix<double>& gram, std::span<const int> y, const SmoOptions& opt,
                       std::span<const double> weights = {});

struct SvmStatus {
  bool converged = true;
  bool inconsistent_labels = false;  // identical inputs carry opposite labels
  std::size_t iterations = 0;
};

/// Binary class-vs-rest model; support vectors are stored standardized.
struct SvmModel {
  KernelSpec kernel;
  double C = 1.0;
  Scaler scaler;
  Matrix<double> support_vectors;
  std::vector<double> coef;  // alpha_i * y_i
  double bias = 0.0;
  SvmStatus status;

  /// f(x) for a raw (unstandardized) input.
  double decision(std::span<const double> x) const;
  double decision_standardized(std::span<const double> z) const;
};

/// Trains on labels in {-1, +1}. Throws DegenerateLabels if a class is absent.
SvmModel train_smo(const Matrix<double>& x, std::span<const int> y, const KernelSpec& kernel,
                   const SmoOptions& opt = {});

/// Same as train_smo, but `dual` receives the full dual solution.
SvmModel train_smo(const Matrix<double>& x, std::span<const int> y, const KernelSpec& kernel,
                   const SmoOptions& opt, DualSolution& dual);

struct MulticlassSvm {
  std::vector<SvmModel> models;  // models[c] separates class c from the rest
};

/// One-vs-rest over labels {0, 1, 2}.
MulticlassSvm train_multiclass(const Matrix<double>& x, std::span<const int> labels, const KernelSpec& kernel,
                               const SmoOptions& opt = {});

struct SvmPrediction {
  int label = 0;
  std::array<double, 3> decision_values{};
};

/// Argmax of the decision values; ties go to the lowest class index.
int argmax_lowest(std::span<const double> values);

SvmPrediction predict(const MulticlassSvm& m, std::span<const double> x);

/// Structured text (JSON) model file: kernel, scaler, support vectors,
/// multipliers and bias per class.
std::string serialize(const MulticlassSvm& m);
MulticlassSvm deserialize_svm(const std::string& text);

}  // namespace eegtask
