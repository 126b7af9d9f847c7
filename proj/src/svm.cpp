#include "eegtask/svm.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "eegtask/error.hpp"
#include "json.hpp"

namespace eegtask {

namespace {

constexpr double kTau = 1e-12;

double effective_gamma(const KernelSpec& k, std::size_t n_features) {
  if (k.kind != KernelKind::Rbf) return 0.0;
  if (k.gamma > 0.0) return k.gamma;
  return 1.0 / static_cast<double>(std::max<std::size_t>(1, n_features));
}

void check_binary_labels(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw Error(ErrorCode::InvalidArgument, "binary labels must be -1 or +1");
  }
  if (!pos || !neg) throw Error(ErrorCode::DegenerateLabels, "both classes need at least one example");
}

bool has_inconsistent_duplicates(const Matrix<double>& x, std::span<const int> y) {
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  auto row_less = [&](std::size_t a, std::size_t b) {
    const auto ra = x.row(a), rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), row_less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto ra = x.row(order[i - 1]), rb = x.row(order[i]);
    if (std::equal(ra.begin(), ra.end(), rb.begin())) {
      // Scan the whole run of equal rows for mixed labels.
      std::size_t j = i;
      while (j < order.size() && std::equal(ra.begin(), ra.end(), x.row(order[j]).begin())) {
        if (y[order[j]] != y[order[i - 1]]) return true;
        ++j;
      }
    }
  }
  return false;
}

SvmModel model_from_dual(const Matrix<double>& z, std::span<const int> y, const KernelSpec& kernel,
                         double C, Scaler scaler, const DualSolution& dual) {
  SvmModel m;
  m.kernel = kernel;
  m.C = C;
  m.scaler = std::move(scaler);
  m.bias = dual.bias;
  m.status.converged = dual.converged;
  m.status.iterations = dual.iterations;
  std::size_t n_sv = 0;
  for (double a : dual.alpha) n_sv += a > 0.0 ? 1 : 0;
  m.support_vectors = Matrix<double>(n_sv, z.cols());
  std::size_t s = 0;
  for (std::size_t i = 0; i < dual.alpha.size(); ++i) {
    if (dual.alpha[i] <= 0.0) continue;
    std::copy(z.row(i).begin(), z.row(i).end(), m.support_vectors.row(s).begin());
    m.coef.push_back(dual.alpha[i] * y[i]);
    ++s;
  }
  return m;
}

}  // namespace

double kernel_value(const KernelSpec& k, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "kernel arguments differ in length");
  if (k.kind == KernelKind::Linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-effective_gamma(k, a.size()) * d2);
}

Matrix<double> kernel_matrix(const KernelSpec& k, const Matrix<double>& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix<double> g(n, n);
  if (k.kind == KernelKind::Linear) {
    if (n > 0 && d > 0) {
      cblas_dsyrk(CblasRowMajor, CblasUpper, CblasNoTrans, static_cast<int>(n), static_cast<int>(d), 1.0,
                  x.data().data(), static_cast<int>(d), 0.0, g.data().data(), static_cast<int>(n));
    }
  } else {
    const KernelSpec fixed{KernelKind::Rbf, effective_gamma(k, d)};
    for (std::size_t i = 0; i < n; ++i) {
      g(i, i) = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) g(i, j) = kernel_value(fixed, x.row(i), x.row(j));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
  return g;
}

Scaler Scaler::fit(const Matrix<double>& x) {
  Scaler s;
  const std::size_t n = x.rows(), d = x.cols();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  if (n == 0) return s;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  std::vector<double> var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mean[j];
      var[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(n));
    s.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[j])) ? sd : 1.0;
  }
  return s;
}

void Scaler::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != mean.size() || out.size() != mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "scaler expects " + std::to_string(mean.size()) + " features");
  }
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - mean[j]) / scale[j];
}

Matrix<double> Scaler::apply(const Matrix<double>& x) const {
  Matrix<double> z(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) apply(x.row(i), z.row(i));
  return z;
}

DualSolution solve_smo(const Matrix<double>& gram, std::span<const int> y, const SmoOptions& opt,
                       std::span<const double> weights) {
  const std::size_t n = y.size();
  if (gram.rows() != n || gram.cols() != n) throw Error(ErrorCode::DimensionMismatch, "kernel matrix size");
  check_binary_labels(y);
  if (!(opt.C > 0.0)) throw Error(ErrorCode::InvalidArgument, "C must be positive");
  if (!weights.empty() && weights.size() != n) throw Error(ErrorCode::DimensionMismatch, "weight count");
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Per-example box bound C_t = C * w_t.
  std::vector<double> cap(n, opt.C);
  for (std::size_t t = 0; t < weights.size(); ++t) {
    if (!(weights[t] > 0.0)) throw Error(ErrorCode::InvalidArgument, "weights must be positive");
    cap[t] = opt.C * weights[t];
  }

  DualSolution sol;
  auto& alpha = sol.alpha;
  alpha.assign(n, 0.0);
  std::vector<double> yd(n);
  for (std::size_t t = 0; t < n; ++t) yd[t] = static_cast<double>(y[t]);

  // v_t = -y_t * grad_t with grad = Q alpha - 1, Q_ij = y_i y_j K_ij; v_t
  // equals b - E_t.
  std::vector<double> v(yd);

  // Membership of the up/low sets as additive masks (0 or -/+inf).
  std::vector<double> up_mask(n), low_mask(n);
  auto refresh_masks = [&](std::size_t t) {
    const bool up = y[t] > 0 ? alpha[t] < cap[t] : alpha[t] > 0.0;
    const bool low = y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < cap[t];
    up_mask[t] = up ? 0.0 : -kInf;
    low_mask[t] = low ? 0.0 : kInf;
  };
  for (std::size_t t = 0; t < n; ++t) refresh_masks(t);

  auto objective = [&] {
    // grad_t = -y_t v_t
    double f = 0.0;
    for (std::size_t t = 0; t < n; ++t) f += alpha[t] * (-yd[t] * v[t] - 1.0);
    return -0.5 * f;
  };

  const std::size_t max_iter = std::max<std::size_t>(1, opt.max_passes) * std::max<std::size_t>(n, 1);
  const double* vp = v.data();
  const double* __restrict upm = up_mask.data();
  const double* __restrict lowm = low_mask.data();
  // Maximal violating pair: i maximizes v over the up-set (smallest E),
  // j minimizes v over the low-set (largest E); first index on ties.
  double m_up = -kInf, m_low = kInf;
#pragma omp simd reduction(max : m_up) reduction(min : m_low)
  for (std::size_t t = 0; t < n; ++t) {
    m_up = std::max(m_up, vp[t] + upm[t]);
    m_low = std::min(m_low, vp[t] + lowm[t]);
  }
  for (;;) {
    if (!(m_up > -kInf) || !(m_low < kInf) || m_up - m_low < opt.tol) {
      sol.converged = true;
      break;
    }
    if (sol.iterations >= max_iter) break;
    ++sol.iterations;
    double fi = kInf, fj = kInf;
#pragma omp simd reduction(min : fi) reduction(min : fj)
    for (std::size_t t = 0; t < n; ++t) {
      const double pos = static_cast<double>(t);
      fi = std::min(fi, vp[t] + upm[t] == m_up ? pos : kInf);
      fj = std::min(fj, vp[t] + lowm[t] == m_low ? pos : kInf);
    }
    const auto i = static_cast<std::size_t>(fi), j = static_cast<std::size_t>(fj);

    const auto ki = gram.row(i), kj = gram.row(j);
    const double old_i = alpha[i], old_j = alpha[j];
    const double gi = -yd[i] * v[i], gj = -yd[j] * v[j];
    const double ci = cap[i], cj = cap[j];
    double quad = ki[i] + kj[j] - 2.0 * ki[j];
    if (quad <= 0.0) quad = kTau;
    if (y[i] != y[j]) {
      const double delta = (-gi - gj) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > ci - cj) {
        if (alpha[i] > ci) {
          alpha[i] = ci;
          alpha[j] = ci - diff;
        }
      } else if (alpha[j] > cj) {
        alpha[j] = cj;
        alpha[i] = cj + diff;
      }
    } else {
      const double delta = (gi - gj) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > ci) {
        if (alpha[i] > ci) {
          alpha[i] = ci;
          alpha[j] = sum - ci;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > cj) {
        if (alpha[j] > cj) {
          alpha[j] = cj;
          alpha[i] = sum - cj;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
    refresh_masks(i);
    refresh_masks(j);

    const double di = (alpha[i] - old_i) * yd[i];
    const double dj = (alpha[j] - old_j) * yd[j];
    double* __restrict vw = v.data();
    const double* __restrict kip = ki.data();
    const double* __restrict kjp = kj.data();
    m_up = -kInf;
    m_low = kInf;
#pragma omp simd reduction(max : m_up) reduction(min : m_low)
    for (std::size_t t = 0; t < n; ++t) {
      vw[t] -= kip[t] * di + kjp[t] * dj;
      m_up = std::max(m_up, vw[t] + upm[t]);
      m_low = std::min(m_low, vw[t] + lowm[t]);
    }
    if (opt.record_objective) sol.objective.push_back(objective());
  }

  // Bias from free multipliers, else the midpoint of the feasible interval.
  double ub = kInf, lb = -kInf, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0 && alpha[t] < cap[t]) {
      sum_free += v[t];
      ++n_free;
    } else {
      const bool at_upper_bound_side = (y[t] > 0) == (alpha[t] >= cap[t]);
      if (at_upper_bound_side) ub = std::min(ub, v[t]);
      else lb = std::max(lb, v[t]);
    }
  }
  if (n_free > 0) {
    sol.bias = sum_free / static_cast<double>(n_free);
  } else if (std::isfinite(ub) && std::isfinite(lb)) {
    sol.bias = 0.5 * (ub + lb);
  } else {
    sol.bias = std::isfinite(ub) ? ub : (std::isfinite(lb) ? lb : 0.0);
  }
  return sol;
}

SvmModel train_smo(const Matrix<double>& x, std::span<const int> y, const KernelSpec& kernel,
                   const SmoOptions& opt, DualSolution& dual) {
  if (x.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "row count differs from label count");
  check_binary_labels(y);
  auto scaler = Scaler::fit(x);
  const auto z = scaler.apply(x);
  KernelSpec fixed = kernel;
  if (fixed.kind == KernelKind::Rbf) fixed.gamma = effective_gamma(kernel, x.cols());
  dual = solve_smo(kernel_matrix(fixed, z), y, opt);
  auto m = model_from_dual(z, y, fixed, opt.C, std::move(scaler), dual);
  m.status.inconsistent_labels = has_inconsistent_duplicates(x, y);
  return m;
}

SvmModel train_smo(const Matrix<double>& x, std::span<const int> y, const KernelSpec& kernel,
                   const SmoOptions& opt) {
  DualSolution dual;
  return train_smo(x, y, kernel, opt, dual);
}

double SvmModel::decision_standardized(std::span<const double> z) const {
  double f = bias;
  for (std::size_t s = 0; s < coef.size(); ++s) f += coef[s] * kernel_value(kernel, support_vectors.row(s), z);
  return f;
}

double SvmModel::decision(std::span<const double> x) const {
  std::vector<double> z(x.size());
  scaler.apply(x, z);
  return decision_standardized(z);
}

MulticlassSvm train_multiclass(const Matrix<double>& x, std::span<const int> labels, const KernelSpec& kernel,
                               const SmoOptions& opt) {
  if (x.rows() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "row count differs from label count");
  auto scaler = Scaler::fit(x);
  const auto z = scaler.apply(x);
  KernelSpec fixed = kernel;
  if (fixed.kind == KernelKind::Rbf) fixed.gamma = effective_gamma(kernel, x.cols());
  const auto gram = kernel_matrix(fixed, z);

  MulticlassSvm out;
  std::vector<int> y(labels.size());
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] > 2) throw Error(ErrorCode::InvalidArgument, "class labels must be 0, 1 or 2");
      y[i] = labels[i] == c ? 1 : -1;
    }
    const auto dual = solve_smo(gram, y, opt);
    out.models.push_back(model_from_dual(z, y, fixed, opt.C, scaler, dual));
  }
  return out;
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t c = 1; c < values.size(); ++c) {
    if (values[c] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

SvmPrediction predict(const MulticlassSvm& m, std::span<const double> x) {
  if (m.models.size() != 3) throw Error(ErrorCode::InvalidArgument, "multiclass model needs three members");
  if (x.size() != m.models.front().scaler.mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(m.models.front().scaler.mean.size()) +
                                                  " features, got " + std::to_string(x.size()));
  }
  SvmPrediction p;
  for (std::size_t c = 0; c < 3; ++c) p.decision_values[c] = m.models[c].decision(x);
  p.label = argmax_lowest(p.decision_values);
  return p;
}

std::string serialize(const MulticlassSvm& m) {
  using nlohmann::json;
  json models = json::array();
  for (const auto& s : m.models) {
    json sv = json::array();
    for (std::size_t i = 0; i < s.support_vectors.rows(); ++i) {
      sv.push_back(std::vector<double>(s.support_vectors.row(i).begin(), s.support_vectors.row(i).end()));
    }
    models.push_back({{"kernel", s.kernel.kind == KernelKind::Linear ? "linear" : "rbf"},
                      {"gamma", s.kernel.gamma},
                      {"C", s.C},
                      {"scaler_mean", s.scaler.mean},
                      {"scaler_scale", s.scaler.scale},
                      {"support_vectors", sv},
                      {"coef", s.coef},
                      {"bias", s.bias},
                      {"converged", s.status.converged}});
  }
  return json{{"format", "eegtask-svm-1"}, {"models", models}}.dump(1);
}

MulticlassSvm deserialize_svm(const std::string& text) {
  using nlohmann::json;
  MulticlassSvm m;
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "eegtask-svm-1") throw Error(ErrorCode::InvalidArgument, "unknown SVM model format");
    for (const auto& js : j.at("models")) {
      SvmModel s;
      s.kernel.kind = js.at("kernel") == "linear" ? KernelKind::Linear : KernelKind::Rbf;
      s.kernel.gamma = js.at("gamma").get<double>();
      s.C = js.at("C").get<double>();
      s.scaler.mean = js.at("scaler_mean").get<std::vector<double>>();
      s.scaler.scale = js.at("scaler_scale").get<std::vector<double>>();
      const auto sv = js.at("support_vectors").get<std::vector<std::vector<double>>>();
      s.support_vectors = Matrix<double>(sv.size(), s.scaler.mean.size());
      for (std::size_t i = 0; i < sv.size(); ++i) {
        if (sv[i].size() != s.scaler.mean.size()) throw Error(ErrorCode::DimensionMismatch, "support vector width");
        std::copy(sv[i].begin(), sv[i].end(), s.support_vectors.row(i).begin());
      }
      s.coef = js.at("coef").get<std::vector<double>>();
      s.bias = js.at("bias").get<double>();
      s.status.converged = js.at("converged").get<bool>();
      m.models.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed SVM model: ") + e.what());
  }
  return m;
}

}  // namespace eegtask
