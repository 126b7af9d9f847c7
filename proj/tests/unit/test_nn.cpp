#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "eegtask/error.hpp"
#include "eegtask/nn.hpp"
#include "eegtask/seed.hpp"

using namespace eegtask;
namespace fs = std::filesystem;

namespace {

template <typename T>
std::vector<T> random_input(const NetworkShape& s, Rng& rng, double sd = 10.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<T> x(s.n_channels * s.n_samples);
  for (auto& v : x) v = static_cast<T>(g(rng));
  return x;
}

template <typename T>
Network<T> initialized(const NetworkShape& s, std::uint64_t seed, double sd = 10.0) {
  Network<T> net(s);
  Rng rng(seed);
  std::vector<std::vector<T>> cal;
  for (int i = 0; i < 8; ++i) cal.push_back(random_input<T>(s, rng, sd));
  net.initialize(seed, cal);
  return net;
}

double relative_error(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  return m < 1e-10 ? 0.0 : std::abs(a - b) / m;
}

}  // namespace

TEST_CASE("standard shape chain and parameter count") {
  const auto s = NetworkShape::standard();
  const std::vector<std::vector<std::size_t>> expected = {
      {1, 20, 512}, {1, 20, 512}, {10, 20, 483}, {10, 1, 444}, {10, 1, 444},
      {10, 1, 10},  {10, 1, 10},  {10, 1, 10},   {3, 1, 1},    {3}};
  CHECK(s.shape_chain() == expected);
  CHECK(s.parameter_count() == 81423);
  CHECK(Network<float>(s).parameter_count() == 81423);
}

TEST_CASE("reduced shape") {
  const auto s = NetworkShape::reduced();
  CHECK(s.n_channels == 4);
  CHECK(s.n_samples == 64);
  CHECK(s.pooled_len() == s.classifier_kernel);
  CHECK(s.shape_chain().back() == std::vector<std::size_t>{3});
}

TEST_CASE("inconsistent shapes are construction errors") {
  auto s = NetworkShape::standard();
  s.n_samples = 480;
  CHECK_THROWS_AS(s.validate(), Error);
  try {
    Network<float> net(s);
    FAIL("bad shape accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  auto t = NetworkShape::standard();
  t.n_samples = 100;
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("tensor layout") {
  Network<float> net;
  CHECK(net.tensor_shape(Param::Shift) == std::vector<std::size_t>{20, 20});
  CHECK(net.tensor_shape(Param::Conv1W) == std::vector<std::size_t>{10, 1, 1, 30});
  CHECK(net.tensor_shape(Param::Conv2W) == std::vector<std::size_t>{10, 10, 20, 40});
  CHECK(net.tensor_shape(Param::OutW) == std::vector<std::size_t>{3, 10, 1, 10});
  std::size_t total = 0;
  for (std::size_t p = 0; p < kNumParams; ++p) {
    CHECK(net.tensor_offset(static_cast<Param>(p)) == total);
    total += net.tensor(static_cast<Param>(p)).size();
  }
  CHECK(total == net.parameter_count());
}

TEST_CASE("layer-by-layer activations follow the shape chain and agree with the fused path") {
  const auto s = NetworkShape::standard();
  auto net = initialized<double>(s, 1);
  Rng rng(2);
  const auto x = random_input<double>(s, rng);
  const auto layers = net.forward_layers(x);
  const auto chain = s.shape_chain();
  REQUIRE(layers.size() == chain.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    CHECK(layers[i].shape == chain[i]);
    const auto n = std::accumulate(chain[i].begin(), chain[i].end(), std::size_t{1}, std::multiplies<>());
    CHECK(layers[i].data.size() == n);
    for (double v : layers[i].data) CHECK(std::isfinite(v));
  }
  const auto p = net.forward(x);
  for (std::size_t c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(layers.back().data[c]).epsilon(1e-9));
}

TEST_CASE("identity shift removes the channel mean") {
  const auto s = NetworkShape::standard();
  Network<double> net(s);
  Rng rng(3);
  auto x = random_input<double>(s, rng);
  for (std::size_t c = 0; c < s.n_channels; ++c) {
    for (std::size_t t = 0; t < s.n_samples; ++t) x[c * s.n_samples + t] += 5.0 * static_cast<double>(c);
  }
  const auto shifted = net.forward_layers(x)[1].data;
  for (std::size_t c = 0; c < s.n_channels; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < s.n_samples; ++t) m += shifted[c * s.n_samples + t];
    CHECK(std::abs(m / static_cast<double>(s.n_samples)) <= 1e-9);
  }
}

TEST_CASE("diagonal scale of inverse variances gives the z-score") {
  const auto s = NetworkShape::standard();
  Network<double> net(s);
  Rng rng(4);
  const auto x = random_input<double>(s, rng, 7.0);
  const std::size_t C = s.n_channels, N = s.n_samples;
  std::vector<double> mean(C, 0.0), sd(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < N; ++t) mean[c] += x[c * N + t] / static_cast<double>(N);
    for (std::size_t t = 0; t < N; ++t) sd[c] += std::pow(x[c * N + t] - mean[c], 2) / static_cast<double>(N);
    sd[c] = std::sqrt(sd[c]);
  }
  auto scale = net.tensor(Param::Scale);
  std::fill(scale.begin(), scale.end(), 0.0);
  for (std::size_t c = 0; c < C; ++c) scale[c * C + c] = 1.0 / (sd[c] * sd[c]);
  const auto out = net.forward_layers(x)[1].data;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < N; ++t) CHECK(std::abs(out[c * N + t] - (x[c * N + t] - mean[c]) / sd[c]) <= 1e-6);
  }
}

TEST_CASE("constant channels give zero shift/scale output") {
  const auto s = NetworkShape::reduced();
  Network<double> net(s);
  std::vector<double> x(s.n_channels * s.n_samples);
  for (std::size_t c = 0; c < s.n_channels; ++c) {
    std::fill(x.begin() + static_cast<std::ptrdiff_t>(c * s.n_samples),
              x.begin() + static_cast<std::ptrdiff_t>((c + 1) * s.n_samples), 3.0 * static_cast<double>(c + 1));
  }
  for (double v : net.forward_layers(x)[1].data) CHECK(v == 0.0);
  const auto p = net.forward(x);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("initialization") {
  const auto s = NetworkShape::reduced();
  Network<double> net(s);
  Rng rng(5);
  std::vector<std::vector<double>> cal;
  for (int i = 0; i < 6; ++i) cal.push_back(random_input<double>(s, rng, 1.0 + i));
  net.initialize(6, cal);
  const std::size_t C = s.n_channels, N = s.n_samples;
  const auto shift = net.tensor(Param::Shift), scale = net.tensor(Param::Scale);
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0, v = 0.0;
    for (const auto& x : cal) {
      for (std::size_t t = 0; t < N; ++t) m += x[c * N + t];
    }
    m /= static_cast<double>(cal.size() * N);
    for (const auto& x : cal) {
      for (std::size_t t = 0; t < N; ++t) v += std::pow(x[c * N + t] - m, 2);
    }
    v /= static_cast<double>(cal.size() * N);
    for (std::size_t d = 0; d < C; ++d) {
      CHECK(shift[c * C + d] == (c == d ? 1.0 : 0.0));
      if (c != d) CHECK(scale[c * C + d] == 0.0);
    }
    CHECK(scale[c * C + c] == doctest::Approx(1.0 / (v + 1e-6)).epsilon(1e-9));
  }
  const double bound1 = std::sqrt(6.0 / static_cast<double>(s.temporal_kernel + s.n_filters * s.temporal_kernel));
  for (double w : net.tensor(Param::Conv1W)) CHECK(std::abs(w) <= bound1);
  for (double b : net.tensor(Param::Conv2B)) CHECK(b == 0.0);
  Network<double> again(s);
  again.initialize(6, cal);
  CHECK(std::equal(net.params().begin(), net.params().end(), again.params().begin()));
}

TEST_CASE("softmax normalization over 1000 random inputs") {
  const auto s = NetworkShape::standard();
  auto net = initialized<float>(s, 7);
  Rng rng(8);
  std::uniform_real_distribution<double> sd(0.1, 200.0);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_input<float>(s, rng, sd(rng));
    const auto p = net.forward(x, i % 2 ? Mode::Train : Mode::Eval, static_cast<std::uint64_t>(i));
    double sum = 0.0;
    for (float v : p) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("forward is deterministic; dropout depends only on its seed") {
  const auto s = NetworkShape::standard();
  auto net = initialized<float>(s, 9);
  Rng rng(10);
  const auto x = random_input<float>(s, rng);
  CHECK(net.forward(x) == net.forward(x));
  CHECK(net.forward(x, Mode::Train, 5) == net.forward(x, Mode::Train, 5));
  CHECK(net.forward(x, Mode::Train, 5) != net.forward(x, Mode::Train, 6));
  CHECK(net.forward(x, Mode::Eval, 5) == net.forward(x, Mode::Eval, 6));
  const std::vector<float> wrong(100, 0.0f);
  CHECK_THROWS_AS(net.forward(wrong), Error);
}

TEST_CASE("inverted dropout keeps the expectation of the classifier input") {
  // With a single classifier weight on one pooled position, the logit is a
  // linear probe of one dropped activation.
  const auto s = NetworkShape::reduced();
  auto net = initialized<double>(s, 11);
  auto w3 = net.tensor(Param::OutW);
  std::fill(w3.begin(), w3.end(), 0.0);
  w3[0] = 1e-3;
  Rng rng(12);
  const auto x = random_input<double>(s, rng);
  const auto pe = net.forward(x);
  const double eval_logit = std::log(pe[0] / pe[1]);
  double mean = 0.0;
  std::size_t zeros = 0;
  constexpr int kDraws = 20000;
  for (int d = 0; d < kDraws; ++d) {
    const auto p = net.forward(x, Mode::Train, static_cast<std::uint64_t>(d));
    const double logit = std::log(p[0] / p[1]);
    mean += logit / kDraws;
    zeros += std::abs(logit) < 1e-15;
  }
  CHECK(mean == doctest::Approx(eval_logit).epsilon(0.02));
  CHECK(static_cast<double>(zeros) / kDraws == doctest::Approx(s.dropout).epsilon(0.05));
}

TEST_CASE("gradient matches central differences on the reduced network") {
  const auto s = NetworkShape::reduced();
  auto net = initialized<double>(s, 13, 2.0);
  Rng rng(14);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& b : net.tensor(Param::Conv1B)) b = g(rng);
  for (auto& b : net.tensor(Param::Conv2B)) b = g(rng);
  for (auto& b : net.tensor(Param::OutB)) b = g(rng);
  auto sh = net.tensor(Param::Shift);
  for (auto& v : sh) v += 0.1 * g(rng);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(random_input<double>(s, rng, 2.0));
  const std::vector<int> ys = {0, 2, 1};

  std::vector<double> grad(net.parameter_count());
  net.loss_and_gradient(xs, ys, grad);
  constexpr double h = 1e-3;
  double worst = 0.0;
  for (std::size_t p = 0; p < kNumParams; ++p) {
    const auto param = static_cast<Param>(p);
    const std::size_t off = net.tensor_offset(param);
    double worst_layer = 0.0;
    for (std::size_t i = 0; i < net.tensor(param).size(); ++i) {
      auto& w = net.params()[off + i];
      const double keep = w;
      w = keep + h;
      const double up = net.loss(xs, ys);
      w = keep - h;
      const double down = net.loss(xs, ys);
      w = keep;
      worst_layer = std::max(worst_layer, relative_error(grad[off + i], (up - down) / (2.0 * h)));
    }
    CAPTURE(param_name(param));
    CHECK(worst_layer < 1e-3);
    worst = std::max(worst, worst_layer);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("exact one-hot output gives zero classifier-bias gradient") {
  const auto s = NetworkShape::reduced();
  auto net = initialized<double>(s, 15);
  auto w3 = net.tensor(Param::OutW);
  std::fill(w3.begin(), w3.end(), 0.0);
  auto b3 = net.tensor(Param::OutB);
  b3[0] = 0.0;
  b3[1] = -1000.0;
  b3[2] = -1000.0;
  Rng rng(16);
  const std::vector<std::vector<double>> xs = {random_input<double>(s, rng)};
  const std::vector<int> ys = {0};
  CHECK(net.forward(xs[0])[0] == 1.0);
  std::vector<double> grad(net.parameter_count());
  net.loss_and_gradient(xs, ys, grad);
  for (std::size_t c = 0; c < 3; ++c) CHECK(grad[net.tensor_offset(Param::OutB) + c] == 0.0);
}

TEST_CASE("batch gradient is the mean of example gradients") {
  const auto s = NetworkShape::reduced();
  auto net = initialized<double>(s, 17);
  Rng rng(18);
  const auto a = random_input<double>(s, rng), b = random_input<double>(s, rng);
  const std::size_t n = net.parameter_count();
  std::vector<double> ga(n), gb(n), gab(n);
  const std::vector<std::vector<double>> xa = {a}, xb = {b}, xaab = {a, a, b};
  const std::vector<int> ya = {1}, yb = {2}, yaab = {1, 1, 2};
  const double la = net.loss_and_gradient(xa, ya, ga);
  const double lb = net.loss_and_gradient(xb, yb, gb);
  const double lab = net.loss_and_gradient(xaab, yaab, gab);
  CHECK(lab == doctest::Approx((2.0 * la + lb) / 3.0).epsilon(1e-12));
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(gab[i] == doctest::Approx((2.0 * ga[i] + gb[i]) / 3.0).epsilon(1e-9).scale(1e-12));
  }
}

TEST_CASE("ten examples can be fitted to near-zero loss") {
  const auto s = NetworkShape::reduced();
  auto net = initialized<double>(s, 19);
  Rng rng(20);
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(random_input<double>(s, rng));
    ys.push_back(i % 3);
  }
  const std::size_t n = net.parameter_count();
  std::vector<double> grad(n), m1(n, 0.0), m2(n, 0.0);
  double loss = 1.0;
  for (int step = 1; step <= 2000 && loss >= 0.05; ++step) {
    loss = net.loss_and_gradient(xs, ys, grad);
    auto p = net.params();
    for (std::size_t i = 0; i < n; ++i) {
      m1[i] = 0.9 * m1[i] + 0.1 * grad[i];
      m2[i] = 0.999 * m2[i] + 0.001 * grad[i] * grad[i];
      p[i] -= 1e-2 * (m1[i] / (1.0 - std::pow(0.9, step))) / (std::sqrt(m2[i] / (1.0 - std::pow(0.999, step))) + 1e-8);
    }
  }
  CHECK(net.loss(xs, ys) < 0.05);
}

TEST_CASE("training with zero epochs returns the initialized model") {
  const auto s = NetworkShape::reduced();
  Rng rng(21);
  std::vector<std::vector<float>> xs;
  std::vector<int> ys;
  for (int i = 0; i < 12; ++i) {
    xs.push_back(random_input<float>(s, rng));
    ys.push_back(i % 3);
  }
  TrainConfig cfg;
  cfg.max_epochs = 0;
  cfg.seed = 3;
  const auto r = train_cnn(xs, ys, {}, {}, cfg, s);
  CHECK(r.history.empty());
  CHECK(r.best_epoch == 0);
  Network<float> ref(s);
  std::vector<std::vector<float>> cal;
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(derive_seed(cfg.seed, "shuffle"));
  std::shuffle(order.begin(), order.end(), shuffle);
  for (std::size_t i = 0; i < std::min(cfg.batch_size, xs.size()); ++i) cal.push_back(xs[order[i]]);
  ref.initialize(derive_seed(cfg.seed, "init"), cal);
  CHECK(std::equal(ref.params().begin(), ref.params().end(), r.model.params().begin()));

  const std::vector<int> one(12, 1);
  try {
    train_cnn(xs, one, {}, {}, cfg, s);
    FAIL("single class accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateLabels);
  }
}

TEST_CASE("training is deterministic and keeps the best validation epoch") {
  const auto s = NetworkShape::reduced();
  Rng rng(22);
  std::vector<std::vector<float>> tx, vx;
  std::vector<int> ty, vy;
  for (int i = 0; i < 60; ++i) {
    auto x = random_input<float>(s, rng, 1.0);
    const int y = i % 3;
    // Class-dependent power on one channel.
    for (std::size_t t = 0; t < s.n_samples; ++t) x[static_cast<std::size_t>(y) * s.n_samples + t] *= 4.0f;
    (i < 45 ? tx : vx).push_back(x);
    (i < 45 ? ty : vy).push_back(y);
  }
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.patience = 5;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.seed = 4;
  const auto a = train_cnn(tx, ty, vx, vy, cfg, s);
  const auto b = train_cnn(tx, ty, vx, vy, cfg, s);
  CHECK(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
  CHECK(history_csv(a.history) == history_csv(b.history));
  REQUIRE(!a.history.empty());
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& r : a.history) {
    if (r.val_accuracy > best) {
      best = r.val_accuracy;
      best_epoch = r.epoch;
    }
  }
  CHECK(a.best_epoch == best_epoch);
  CHECK(a.best_val_accuracy == best);
  CHECK(best >= 0.9);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < vx.size(); ++i) ok += predict_class(a.model, vx[i]) == vy[i];
  CHECK(static_cast<double>(ok) / static_cast<double>(vx.size()) == doctest::Approx(best));
  CHECK(history_csv(a.history).rfind("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n", 0) == 0);
}

TEST_CASE("checkpoint round-trip") {
  const auto dir = fs::path(EEGTASK_TEST_TMP);
  fs::create_directories(dir);
  auto net = initialized<float>(NetworkShape::standard(), 23);
  save_checkpoint(net, dir / "model.json");
  CHECK(fs::file_size(dir / "model.f32") == 4 * 81423);
  const auto back = load_checkpoint(dir / "model.json");
  CHECK(std::equal(net.params().begin(), net.params().end(), back.params().begin(), back.params().end()));
  CHECK(back.shape().shape_chain() == net.shape().shape_chain());
  fs::resize_file(dir / "model.f32", 400);
  CHECK_THROWS_AS(load_checkpoint(dir / "model.json"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.json"), Error);
}
