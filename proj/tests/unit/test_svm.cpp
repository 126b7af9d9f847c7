#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "eegtask/error.hpp"
#include "eegtask/seed.hpp"
#include "eegtask/svm.hpp"

using namespace eegtask;

namespace {

struct Fixture {
  Matrix<double> x;
  std::vector<int> y;
};

// Two Gaussian blobs at (+-2, 0), sd 0.3, 50 points each.
Fixture blobs(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  Fixture f{Matrix<double>(100, 2), std::vector<int>(100)};
  for (std::size_t i = 0; i < 100; ++i) {
    const double cx = i < 50 ? 2.0 : -2.0;
    f.x(i, 0) = cx + n(rng);
    f.x(i, 1) = n(rng);
    f.y[i] = i < 50 ? 1 : -1;
  }
  return f;
}

Fixture xor_set(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  Fixture f{Matrix<double>(100, 2), std::vector<int>(100)};
  for (std::size_t i = 0; i < 100; ++i) {
    const double a = (i % 4) < 2 ? 1.0 : -1.0, b = (i % 2) ? 1.0 : -1.0;
    f.x(i, 0) = a + n(rng);
    f.x(i, 1) = b + n(rng);
    f.y[i] = a * b > 0 ? 1 : -1;
  }
  return f;
}

// Three well separated classes in 3-D.
Fixture three_classes(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  Fixture f{Matrix<double>(90, 3), std::vector<int>(90)};
  for (std::size_t i = 0; i < 90; ++i) {
    const int c = static_cast<int>(i % 3);
    for (std::size_t j = 0; j < 3; ++j) f.x(i, j) = (static_cast<int>(j) == c ? 3.0 : 0.0) + n(rng);
    f.y[i] = c;
  }
  return f;
}

double train_accuracy(const SvmModel& m, const Fixture& f) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < f.y.size(); ++i) ok += (m.decision(f.x.row(i)) >= 0.0 ? 1 : -1) == f.y[i];
  return static_cast<double>(ok) / static_cast<double>(f.y.size());
}

}  // namespace

TEST_CASE("separable blobs: perfect training accuracy and KKT within tolerance") {
  const auto f = blobs(1);
  SmoOptions opt;
  DualSolution dual;
  const auto m = train_smo(f.x, f.y, {KernelKind::Linear, 0.0}, opt, dual);
  CHECK(dual.converged);
  CHECK(train_accuracy(m, f) == 1.0);
  const double tol = 1e-3;
  for (std::size_t i = 0; i < f.y.size(); ++i) {
    const double margin = f.y[i] * m.decision(f.x.row(i));
    const double a = dual.alpha[i];
    CHECK(a >= 0.0);
    CHECK(a <= opt.C);
    if (a == 0.0) CHECK(margin >= 1.0 - tol);
    else if (a == opt.C) CHECK(margin <= 1.0 + tol);
    else CHECK(std::abs(margin - 1.0) <= tol);
  }
  double balance = 0.0;
  for (std::size_t i = 0; i < f.y.size(); ++i) balance += dual.alpha[i] * f.y[i];
  CHECK(std::abs(balance) < 1e-9);
}

TEST_CASE("XOR: linear kernel fails, RBF succeeds") {
  const auto f = xor_set(2);
  const auto lin = train_smo(f.x, f.y, {KernelKind::Linear, 0.0});
  CHECK(train_accuracy(lin, f) <= 0.75);
  const auto rbf = train_smo(f.x, f.y, {KernelKind::Rbf, 1.0});
  CHECK(train_accuracy(rbf, f) == 1.0);
}

TEST_CASE("duplicated point with both labels is flagged") {
  Matrix<double> x(2, 2, 0.5);
  const std::vector<int> y = {1, -1};
  const auto m = train_smo(x, y, {KernelKind::Linear, 0.0});
  CHECK(m.status.inconsistent_labels);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < 2; ++i) ok += (m.decision(x.row(i)) >= 0.0 ? 1 : -1) == y[i];
  CHECK(ok == 1);
}

TEST_CASE("single-class labels are degenerate") {
  Matrix<double> x(4, 2, 1.0);
  const std::vector<int> y = {1, 1, 1, 1};
  try {
    train_smo(x, y, {KernelKind::Linear, 0.0});
    FAIL("single class accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateLabels);
  }
}

TEST_CASE("dual objective never decreases") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const auto f = xor_set(seed);
    SmoOptions opt;
    opt.record_objective = true;
    for (KernelKind k : {KernelKind::Linear, KernelKind::Rbf}) {
      DualSolution dual;
      train_smo(f.x, f.y, {k, 1.0}, opt, dual);
      REQUIRE(dual.objective.size() > 1);
      for (std::size_t t = 1; t < dual.objective.size(); ++t) {
        CHECK(dual.objective[t] >= dual.objective[t - 1] - 1e-12 * std::abs(dual.objective[t]));
      }
    }
  }
}

TEST_CASE("iteration budget exhaustion returns the iterate with a flag") {
  const auto f = xor_set(6);
  SmoOptions opt;
  opt.max_passes = 0;
  opt.tol = 1e-12;
  DualSolution dual;
  const auto m = train_smo(f.x, f.y, {KernelKind::Rbf, 1.0}, opt, dual);
  CHECK_FALSE(m.status.converged);
  CHECK(dual.iterations == f.y.size());
}

TEST_CASE("kernel symmetry and unit RBF diagonal") {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<double> x(30, 5);
  for (auto& v : x.data()) v = n(rng);
  for (KernelKind k : {KernelKind::Linear, KernelKind::Rbf}) {
    const KernelSpec spec{k, 0.3};
    const auto g = kernel_matrix(spec, x);
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 30; ++j) {
        CHECK(g(i, j) == g(j, i));
        CHECK(kernel_value(spec, x.row(i), x.row(j)) == kernel_value(spec, x.row(j), x.row(i)));
      }
      if (k == KernelKind::Rbf) {
        CHECK(g(i, i) == 1.0);
        CHECK(kernel_value(spec, x.row(i), x.row(i)) == 1.0);
      }
    }
  }
}

TEST_CASE("weights act as repeated examples") {
  const auto f = xor_set(8);
  std::vector<double> w(f.y.size(), 1.0);
  Matrix<double> xd(f.y.size() + 10, 2);
  std::vector<int> yd(f.y);
  for (std::size_t i = 0; i < f.y.size(); ++i) std::copy(f.x.row(i).begin(), f.x.row(i).end(), xd.row(i).begin());
  for (std::size_t r = 0; r < 10; ++r) {
    const std::size_t src = 7 * r;
    w[src] += 1.0;
    std::copy(f.x.row(src).begin(), f.x.row(src).end(), xd.row(f.y.size() + r).begin());
    yd.push_back(f.y[src]);
  }
  const KernelSpec k{KernelKind::Rbf, 0.5};
  SmoOptions opt;
  opt.tol = 1e-6;
  const auto weighted = solve_smo(kernel_matrix(k, f.x), f.y, opt, w);
  const auto repeated = solve_smo(kernel_matrix(k, xd), yd, opt);
  CHECK(weighted.converged);
  CHECK(repeated.converged);
  // Same primal function: compare decision values at every training point.
  const auto g = kernel_matrix(k, xd);
  for (std::size_t i = 0; i < f.y.size(); ++i) {
    double fw = weighted.bias, fr = repeated.bias;
    for (std::size_t s = 0; s < f.y.size(); ++s) fw += weighted.alpha[s] * f.y[s] * g(i, s);
    for (std::size_t s = 0; s < yd.size(); ++s) fr += repeated.alpha[s] * yd[s] * g(i, s);
    CHECK(fw == doctest::Approx(fr).epsilon(1e-4).scale(1.0));
  }
  for (std::size_t s = 0; s < f.y.size(); ++s) CHECK(weighted.alpha[s] <= opt.C * w[s]);
}

TEST_CASE("multiclass prediction") {
  const auto f = three_classes(9);
  const auto m = train_multiclass(f.x, f.y, {KernelKind::Rbf, 0.0});
  REQUIRE(m.models.size() == 3);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < f.y.size(); ++i) ok += predict(m, f.x.row(i)).label == f.y[i];
  CHECK(ok == f.y.size());

  // A class-2 support vector, mapped back to raw units, predicts class 2.
  const auto& m2 = m.models[2];
  bool found = false;
  for (std::size_t s = 0; s < m2.coef.size() && !found; ++s) {
    if (m2.coef[s] <= 0.0) continue;
    std::vector<double> raw(3);
    for (std::size_t j = 0; j < 3; ++j) raw[j] = m2.support_vectors(s, j) * m2.scaler.scale[j] + m2.scaler.mean[j];
    CHECK(predict(m, raw).label == 2);
    found = true;
  }
  CHECK(found);

  const std::vector<double> wrong(4, 0.0);
  try {
    predict(m, wrong);
    FAIL("wrong length accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("ties go to the lowest class") {
  const std::vector<double> v = {0.5, 0.5, -1.0};
  CHECK(argmax_lowest(v) == 0);
  const std::vector<double> w = {-1.0, 0.2, 0.2};
  CHECK(argmax_lowest(w) == 1);
}

TEST_CASE("predictions are invariant to affine feature transforms") {
  const auto f = three_classes(10);
  Fixture g = f;
  const double shift[3] = {100.0, -5.0, 0.25}, scale[3] = {3.0, 0.01, 42.0};
  for (std::size_t i = 0; i < g.y.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) g.x(i, j) = g.x(i, j) * scale[j] + shift[j];
  }
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  const auto mf = train_multiclass(f.x, f.y, {KernelKind::Rbf, 0.0});
  const auto mg = train_multiclass(g.x, g.y, {KernelKind::Rbf, 0.0});
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(3), b(3);
    for (std::size_t j = 0; j < 3; ++j) {
      a[j] = n(rng);
      b[j] = a[j] * scale[j] + shift[j];
    }
    CHECK(predict(mf, a).label == predict(mg, b).label);
  }
}

TEST_CASE("training is deterministic and the model file round-trips") {
  const auto f = three_classes(12);
  const auto a = train_multiclass(f.x, f.y, {KernelKind::Rbf, 0.0});
  const auto b = train_multiclass(f.x, f.y, {KernelKind::Rbf, 0.0});
  CHECK(serialize(a) == serialize(b));
  const auto back = deserialize_svm(serialize(a));
  CHECK(serialize(back) == serialize(a));
  Rng rng(13);
  std::normal_distribution<double> n(1.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(3);
    for (auto& v : x) v = n(rng);
    const auto pa = predict(a, x), pb = predict(back, x);
    CHECK(pa.label == pb.label);
    for (std::size_t c = 0; c < 3; ++c) CHECK(pa.decision_values[c] == pb.decision_values[c]);
  }
  CHECK_THROWS_AS(deserialize_svm("{\"models\": 3}"), Error);
}

TEST_CASE("scaler keeps constant columns at zero") {
  Matrix<double> x(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = 7.0;
  }
  const auto s = Scaler::fit(x);
  const auto z = s.apply(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z(i, 1) == 0.0);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mean += z(i, 0) / 4.0;
  for (std::size_t i = 0; i < 4; ++i) var += z(i, 0) * z(i, 0) / 4.0;
  CHECK(mean == doctest::Approx(0.0).scale(1.0));
  CHECK(var == doctest::Approx(1.0));
}
