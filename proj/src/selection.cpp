#include "eegtask/selection.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <set>

#include "eegtask/error.hpp"
#include "eegtask/seed.hpp"

namespace eegtask {

namespace {

void validate(const Matrix<double>& x, std::span<const int> labels, const RfeConfig& cfg) {
  if (x.rows() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "row count differs from label count");
  if (cfg.target_k < 1 || cfg.target_k > x.cols()) {
    throw Error(ErrorCode::InvalidArgument, "target_k must lie in [1, n_features]");
  }
  if (!(cfg.drop_fraction > 0.0 && cfg.drop_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "drop_fraction must lie in (0, 1)");
  }
  const std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) throw Error(ErrorCode::DegenerateLabels, "feature ranking needs at least two classes");
}

Matrix<double> standardize_columns(const Matrix<double>& x) {
  const auto scaler = Scaler::fit(x);
  auto z = scaler.apply(x);
  // Constant columns carry no information: zero them so their weight is 0.
  for (std::size_t j = 0; j < x.cols(); ++j) {
    bool constant = true;
    for (std::size_t i = 1; i < x.rows() && constant; ++i) constant = x(i, j) == x(0, j);
    if (constant) {
      for (std::size_t i = 0; i < x.rows(); ++i) z(i, j) = 0.0;
    }
  }
  return z;
}

void mirror_upper(Matrix<double>& g) {
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
}

// gram -= Z[:, cols] Z[:, cols]^T
void downdate(Matrix<double>& gram, const Matrix<double>& z, std::span<const std::size_t> cols) {
  const std::size_t n = z.rows();
  Matrix<double> d(n, cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < cols.size(); ++c) d(i, c) = z(i, cols[c]);
  }
  cblas_dsyrk(CblasRowMajor, CblasUpper, CblasNoTrans, static_cast<int>(n), static_cast<int>(cols.size()), -1.0,
              d.data().data(), static_cast<int>(cols.size()), 1.0, gram.data().data(), static_cast<int>(n));
  mirror_upper(gram);
}

// Elimination on standardized rows; example t counts w_t times.
std::vector<std::size_t> eliminate(const Matrix<double>& z, std::span<const int> labels, std::span<const double> w,
                                   const RfeConfig& cfg) {
  std::vector<std::size_t> surviving(z.cols());
  std::iota(surviving.begin(), surviving.end(), 0);
  if (cfg.target_k == z.cols()) return surviving;

  auto gram = kernel_matrix({KernelKind::Linear, 0.0}, z);
  const std::set<int> classes(labels.begin(), labels.end());
  SmoOptions smo = cfg.smo;
  smo.record_objective = false;

  std::vector<int> y(labels.size());
  std::vector<double> score;
  std::vector<double> coef(labels.size());
  std::vector<double> weights(z.cols());
  while (surviving.size() > cfg.target_k) {
    score.assign(surviving.size(), 0.0);
    for (int c : classes) {
      for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : -1;
      const auto dual = solve_smo(gram, y, smo, w);
      for (std::size_t i = 0; i < y.size(); ++i) coef[i] = dual.alpha[i] * y[i];
      // Primal weights of every column: w = Z^T (alpha * y).
      cblas_dgemv(CblasRowMajor, CblasTrans, static_cast<int>(z.rows()), static_cast<int>(z.cols()), 1.0,
                  z.data().data(), static_cast<int>(z.cols()), coef.data(), 1, 0.0, weights.data(), 1);
      for (std::size_t f = 0; f < surviving.size(); ++f) score[f] += weights[surviving[f]] * weights[surviving[f]];
      // Two classes need a single separating model.
      if (classes.size() == 2) break;
    }

    auto n_drop = static_cast<std::size_t>(std::ceil(cfg.drop_fraction * static_cast<double>(surviving.size())));
    n_drop = std::clamp<std::size_t>(n_drop, 1, surviving.size() - cfg.target_k);

    std::vector<std::size_t> order(surviving.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });

    std::vector<std::size_t> dropped;
    std::vector<bool> remove(surviving.size(), false);
    for (std::size_t r = 0; r < n_drop; ++r) {
      remove[order[r]] = true;
      dropped.push_back(surviving[order[r]]);
    }
    std::vector<std::size_t> next;
    for (std::size_t f = 0; f < surviving.size(); ++f) {
      if (!remove[f]) next.push_back(surviving[f]);
    }
    surviving = std::move(next);
    if (surviving.size() > cfg.target_k) downdate(gram, z, dropped);
  }
  return surviving;
}

}  // namespace

std::vector<std::size_t> rfe_once(const Matrix<double>& x, std::span<const int> labels, const RfeConfig& cfg) {
  validate(x, labels, cfg);
  return eliminate(standardize_columns(x), labels, {}, cfg);
}

SelectionResult rfe_stable(const Matrix<double>& x, std::span<const int> labels, const RfeConfig& cfg) {
  validate(x, labels, cfg);
  if (cfg.n_repeats < 1) throw Error(ErrorCode::InvalidArgument, "n_repeats must be at least 1");
  std::vector<std::size_t> counts(x.cols(), 0);

  if (cfg.n_repeats == 1) {
    for (auto f : rfe_once(x, labels, cfg)) ++counts[f];
  } else {
    const std::size_t n = x.rows();
    Matrix<double> xb(n, x.cols());
    std::vector<int> yb(n);
    std::vector<std::size_t> src(n);
    for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
      Rng rng(derive_seed(cfg.seed, r));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      // Redraw the (vanishingly rare) resample that loses all but one class.
      do {
        for (std::size_t i = 0; i < n; ++i) {
          src[i] = pick(rng);
          std::copy(x.row(src[i]).begin(), x.row(src[i]).end(), xb.row(i).begin());
          yb[i] = labels[src[i]];
        }
      } while (std::set<int>(yb.begin(), yb.end()).size() < 2);
      // Repeated draws collapse into one weighted example.
      const auto zb = standardize_columns(xb);
      std::map<std::size_t, std::size_t> first;
      std::vector<std::size_t> rows;
      std::vector<double> w;
      for (std::size_t i = 0; i < n; ++i) {
        const auto [it, fresh] = first.emplace(src[i], rows.size());
        if (fresh) {
          rows.push_back(i);
          w.push_back(1.0);
        } else {
          w[it->second] += 1.0;
        }
      }
      Matrix<double> zu(rows.size(), x.cols());
      std::vector<int> yu(rows.size());
      for (std::size_t u = 0; u < rows.size(); ++u) {
        std::copy(zb.row(rows[u]).begin(), zb.row(rows[u]).end(), zu.row(u).begin());
        yu[u] = yb[rows[u]];
      }
      for (auto f : eliminate(zu, yu, w, cfg)) ++counts[f];
    }
  }

  SelectionResult result;
  result.n_repeats = cfg.n_repeats;
  for (std::size_t f = 0; f < counts.size(); ++f) {
    if (counts[f] > 0) result.ranked.emplace_back(f, counts[f]);
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t i = 0; i < cfg.target_k && i < result.ranked.size(); ++i) {
    result.selected.push_back(result.ranked[i].first);
  }
  return result;
}

}  // namespace eegtask
