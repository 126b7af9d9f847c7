#include "eegtask/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "eegtask/error.hpp"
#include "eegtask/recording.hpp"
#include "eegtask/seed.hpp"
#include "json.hpp"

namespace eegtask {

NetworkShape NetworkShape::reduced() {
  NetworkShape s;
  s.n_channels = 4;
  s.n_samples = 64;
  s.temporal_kernel = 5;
  s.n_filters = 3;
  s.spatial_time_kernel = 8;
  s.pool_kernel = 15;
  s.pool_stride = 5;
  s.classifier_kernel = 8;
  return s;
}

std::size_t NetworkShape::conv1_len() const {
  return n_samples >= temporal_kernel ? n_samples - temporal_kernel + 1 : 0;
}

std::size_t NetworkShape::conv2_len() const {
  const auto l1 = conv1_len();
  return l1 >= spatial_time_kernel ? l1 - spatial_time_kernel + 1 : 0;
}

std::size_t NetworkShape::pooled_len() const {
  const auto l2 = conv2_len();
  if (pool_stride == 0 || l2 < pool_kernel) return 0;
  return (l2 - pool_kernel) / pool_stride + 1;
}

std::vector<std::vector<std::size_t>> NetworkShape::shape_chain() const {
  const std::size_t c = n_channels, f = n_filters, l3 = pooled_len();
  const std::size_t out_len = l3 >= classifier_kernel ? l3 - classifier_kernel + 1 : 0;
  return {{1, c, n_samples},          // input
          {1, c, n_samples},          // shift/scale
          {f, c, conv1_len()},        // temporal conv
          {f, 1, conv2_len()},        // spatial conv
          {f, 1, conv2_len()},        // square
          {f, 1, l3},                 // average pool
          {f, 1, l3},                 // log
          {f, 1, l3},                 // dropout
          {n_classes, 1, out_len},    // classifier conv
          {n_classes}};               // softmax
}

std::size_t NetworkShape::parameter_count() const {
  const std::size_t c = n_channels, f = n_filters;
  return 2 * c * c + (f * temporal_kernel + f) + (f * f * c * spatial_time_kernel + f) +
         (n_classes * f * classifier_kernel + n_classes);
}

void NetworkShape::validate() const {
  if (n_channels == 0 || n_filters == 0 || n_classes < 2 || temporal_kernel == 0 || spatial_time_kernel == 0 ||
      pool_kernel == 0 || pool_stride == 0 || classifier_kernel == 0) {
    throw Error(ErrorCode::ShapeMismatch, "all layer extents must be positive");
  }
  if (conv1_len() == 0 || conv2_len() == 0 || pooled_len() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "input too short for the convolution/pooling stack");
  }
  if (pooled_len() != classifier_kernel) {
    throw Error(ErrorCode::ShapeMismatch, "classifier kernel " + std::to_string(classifier_kernel) +
                                              " does not collapse pooled length " + std::to_string(pooled_len()));
  }
  if (!(dropout >= 0.0 && dropout < 1.0) || !(log_eps > 0.0)) {
    throw Error(ErrorCode::ShapeMismatch, "dropout must lie in [0, 1) and log clamp must be positive");
  }
}

std::string_view param_name(Param p) {
  switch (p) {
    case Param::Shift: return "shift";
    case Param::Scale: return "scale";
    case Param::Conv1W: return "temporal_conv.weight";
    case Param::Conv1B: return "temporal_conv.bias";
    case Param::Conv2W: return "spatial_conv.weight";
    case Param::Conv2B: return "spatial_conv.bias";
    case Param::OutW: return "classifier.weight";
    case Param::OutB: return "classifier.bias";
  }
  return "?";
}

template <typename T>
struct Network<T>::Composed {
  std::vector<T> kernel;  // [F][C][K], K = k1 + k2 - 1
  std::vector<T> bias;    // [F]
  std::vector<T> w2_sum;  // [F_out][F_in], sum of conv2 weights over (c, j)
};

template <typename T>
struct Network<T>::Workspace {
  std::vector<T> mean, shift, ubar, sigma, gain;  // [C]
  std::vector<T> shifted, xp;                     // [C][T]
  std::vector<T> out2;                            // [F][L2]
  std::vector<T> pooled, dropped, mask;           // [F][L3]
  std::vector<T> logits, prob;                    // [n_classes]
  // backward scratch
  std::vector<T> dout2, dxp, dpool;
};

template <typename T>
Network<T>::Network(NetworkShape shape) : shape_(shape) {
  shape_.validate();
  for (std::size_t p = 0; p < kNumParams; ++p) {
    const auto dims = tensor_shape(static_cast<Param>(p));
    offsets_[p + 1] = offsets_[p] + std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }
  params_.assign(offsets_[kNumParams], T(0));
  if (params_.size() != shape_.parameter_count()) throw Error(ErrorCode::ShapeMismatch, "parameter layout");
  auto shift = tensor(Param::Shift);
  auto scale = tensor(Param::Scale);
  for (std::size_t c = 0; c < shape_.n_channels; ++c) {
    shift[c * shape_.n_channels + c] = T(1);
    scale[c * shape_.n_channels + c] = T(1);
  }
}

template <typename T>
std::vector<std::size_t> Network<T>::tensor_shape(Param p) const {
  const auto& s = shape_;
  switch (p) {
    case Param::Shift:
    case Param::Scale: return {s.n_channels, s.n_channels};
    case Param::Conv1W: return {s.n_filters, 1, 1, s.temporal_kernel};
    case Param::Conv1B: return {s.n_filters};
    case Param::Conv2W: return {s.n_filters, s.n_filters, s.n_channels, s.spatial_time_kernel};
    case Param::Conv2B: return {s.n_filters};
    case Param::OutW: return {s.n_classes, s.n_filters, 1, s.classifier_kernel};
    case Param::OutB: return {s.n_classes};
  }
  return {};
}

template <typename T>
std::span<T> Network<T>::tensor(Param p) {
  const auto i = static_cast<std::size_t>(p);
  return std::span<T>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

template <typename T>
std::span<const T> Network<T>::tensor(Param p) const {
  const auto i = static_cast<std::size_t>(p);
  return std::span<const T>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
}

template <typename T>
void Network<T>::initialize(std::uint64_t seed, std::span<const std::vector<T>> calibration) {
  const auto& s = shape_;
  const std::size_t C = s.n_channels, N = s.n_samples;
  std::fill(params_.begin(), params_.end(), T(0));

  auto shift = tensor(Param::Shift);
  auto scale = tensor(Param::Scale);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& x : calibration) {
      if (x.size() != C * N) throw Error(ErrorCode::ShapeMismatch, "calibration input has wrong size");
      for (std::size_t t = 0; t < N; ++t) {
        const double v = x[c * N + t];
        sum += v;
        sum_sq += v * v;
      }
      count += N;
    }
    double var = 1.0;
    if (count > 0) {
      const double mean = sum / static_cast<double>(count);
      var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
    }
    shift[c * C + c] = T(1);
    scale[c * C + c] = static_cast<T>(1.0 / (var + 1e-6));
  }

  Rng rng(seed);
  auto glorot = [&](Param p, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : tensor(p)) w = static_cast<T>(dist(rng));
  };
  const double k1 = static_cast<double>(s.temporal_kernel), f = static_cast<double>(s.n_filters);
  const double cc = static_cast<double>(C), k2 = static_cast<double>(s.spatial_time_kernel);
  const double kc = static_cast<double>(s.classifier_kernel), nc = static_cast<double>(s.n_classes);
  glorot(Param::Conv1W, k1, f * k1);
  glorot(Param::Conv2W, f * cc * k2, f * cc * k2);
  glorot(Param::OutW, f * kc, nc * kc);
}

template <typename T>
typename Network<T>::Composed Network<T>::compose() const {
  const auto& s = shape_;
  const std::size_t F = s.n_filters, C = s.n_channels, k1 = s.temporal_kernel, k2 = s.spatial_time_kernel;
  const std::size_t K = s.composed_kernel();
  const auto w1 = tensor(Param::Conv1W);
  const auto b1 = tensor(Param::Conv1B);
  const auto w2 = tensor(Param::Conv2W);
  const auto b2 = tensor(Param::Conv2B);

  Composed out;
  out.kernel.assign(F * C * K, T(0));
  out.bias.assign(b2.begin(), b2.end());
  out.w2_sum.assign(F * F, T(0));
  for (std::size_t o = 0; o < F; ++o) {
    for (std::size_t f = 0; f < F; ++f) {
      T wsum = 0;
      for (std::size_t c = 0; c < C; ++c) {
        T* kr = &out.kernel[(o * C + c) * K];
        const T* w2r = &w2[((o * F + f) * C + c) * k2];
        const T* w1r = &w1[f * k1];
        for (std::size_t j = 0; j < k2; ++j) {
          const T w = w2r[j];
          wsum += w;
          for (std::size_t i = 0; i < k1; ++i) kr[j + i] += w * w1r[i];
        }
      }
      out.w2_sum[o * F + f] = wsum;
      out.bias[o] += b1[f] * wsum;
    }
  }
  return out;
}

template <typename T>
void Network<T>::forward_example(const Composed& k, std::span<const T> x, bool dropout, std::uint64_t seed,
                                 Workspace& ws) const {
  const auto& s = shape_;
  const std::size_t C = s.n_channels, N = s.n_samples, F = s.n_filters, K = s.composed_kernel();
  const std::size_t L2 = s.conv2_len(), L3 = s.pooled_len(), P = s.pool_kernel, S = s.pool_stride;
  const std::size_t NC = s.n_classes, KC = s.classifier_kernel;
  if (x.size() != C * N) {
    throw Error(ErrorCode::ShapeMismatch, "expected input of " + std::to_string(C) + " x " + std::to_string(N));
  }

  // Shift/scale: xp = (x - W_sh * mean) .* (W_sc * std(shifted)).
  const auto wsh = tensor(Param::Shift);
  const auto wsc = tensor(Param::Scale);
  ws.mean.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T acc = 0;
    for (std::size_t t = 0; t < N; ++t) acc += x[c * N + t];
    ws.mean[c] = acc / static_cast<T>(N);
  }
  ws.shift.assign(C, T(0));
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) ws.shift[i] += wsh[i * C + j] * ws.mean[j];
  }
  ws.shifted.resize(C * N);
  ws.ubar.assign(C, T(0));
  ws.sigma.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T acc = 0;
    for (std::size_t t = 0; t < N; ++t) {
      const T u = x[c * N + t] - ws.shift[c];
      ws.shifted[c * N + t] = u;
      acc += u;
    }
    ws.ubar[c] = acc / static_cast<T>(N);
    T var = 0;
    for (std::size_t t = 0; t < N; ++t) {
      const T d = ws.shifted[c * N + t] - ws.ubar[c];
      var += d * d;
    }
    ws.sigma[c] = std::sqrt(var / static_cast<T>(N));
  }
  ws.gain.assign(C, T(0));
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) ws.gain[i] += wsc[i * C + j] * ws.sigma[j];
  }
  ws.xp.resize(C * N);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < N; ++t) ws.xp[c * N + t] = ws.shifted[c * N + t] * ws.gain[c];
  }

  // Both convolutions at once through the composed kernel.
  ws.out2.resize(F * L2);
  for (std::size_t o = 0; o < F; ++o) {
    T* __restrict out = &ws.out2[o * L2];
    std::fill(out, out + L2, k.bias[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const T* kr = &k.kernel[(o * C + c) * K];
      const T* xr = &ws.xp[c * N];
      for (std::size_t u = 0; u < K; ++u) {
        const T w = kr[u];
        const T* __restrict src = xr + u;
        for (std::size_t t = 0; t < L2; ++t) out[t] += w * src[t];
      }
    }
  }

  // Square, average pool, log, dropout.
  const T eps = static_cast<T>(s.log_eps);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - s.dropout));
  ws.pooled.resize(F * L3);
  ws.dropped.resize(F * L3);
  ws.mask.assign(F * L3, T(1));
  if (dropout && s.dropout > 0.0) {
    Rng rng(seed);
    std::bernoulli_distribution keep(1.0 - s.dropout);
    for (auto& m : ws.mask) m = keep(rng) ? keep_scale : T(0);
  }
  for (std::size_t o = 0; o < F; ++o) {
    const T* sq = &ws.out2[o * L2];
    for (std::size_t w = 0; w < L3; ++w) {
      T acc = 0;
      for (std::size_t t = w * S; t < w * S + P; ++t) acc += sq[t] * sq[t];
      const T p = acc / static_cast<T>(P);
      ws.pooled[o * L3 + w] = p;
      ws.dropped[o * L3 + w] = std::log(std::max(p, eps)) * ws.mask[o * L3 + w];
    }
  }

  // Classifier convolution spans the full pooled length.
  const auto w3 = tensor(Param::OutW);
  const auto b3 = tensor(Param::OutB);
  ws.logits.assign(NC, T(0));
  for (std::size_t cl = 0; cl < NC; ++cl) {
    T acc = b3[cl];
    for (std::size_t i = 0; i < F * KC; ++i) acc += w3[cl * F * KC + i] * ws.dropped[i];
    ws.logits[cl] = acc;
  }
  const T zmax = *std::max_element(ws.logits.begin(), ws.logits.end());
  ws.prob.resize(NC);
  T denom = 0;
  for (std::size_t cl = 0; cl < NC; ++cl) {
    ws.prob[cl] = std::exp(ws.logits[cl] - zmax);
    denom += ws.prob[cl];
  }
  for (auto& p : ws.prob) p /= denom;
}

template <typename T>
std::vector<T> Network<T>::forward(std::span<const T> x, Mode mode, std::uint64_t dropout_seed) const {
  const auto k = compose();
  Workspace ws;
  forward_example(k, x, mode == Mode::Train, dropout_seed, ws);
  return ws.prob;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::forward_layers(std::span<const T> x) const {
  const auto& s = shape_;
  const std::size_t C = s.n_channels, N = s.n_samples, F = s.n_filters;
  const std::size_t k1 = s.temporal_kernel, k2 = s.spatial_time_kernel;
  const std::size_t L1 = s.conv1_len(), L2 = s.conv2_len(), L3 = s.pooled_len();
  const std::size_t NC = s.n_classes, KC = s.classifier_kernel;
  if (x.size() != C * N) throw Error(ErrorCode::ShapeMismatch, "input size");
  const auto chain = s.shape_chain();

  std::vector<Tensor<T>> layers;
  layers.push_back({chain[0], {x.begin(), x.end()}});

  // Shift/scale, computed directly from the definition.
  const auto wsh = tensor(Param::Shift);
  const auto wsc = tensor(Param::Scale);
  std::vector<T> mean(C), shift(C, T(0)), sigma(C), gain(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    mean[c] = std::accumulate(x.begin() + c * N, x.begin() + (c + 1) * N, T(0)) / static_cast<T>(N);
  }
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) shift[i] += wsh[i * C + j] * mean[j];
  }
  std::vector<T> shifted(C * N);
  for (std::size_t c = 0; c < C; ++c) {
    T m = 0;
    for (std::size_t t = 0; t < N; ++t) m += (shifted[c * N + t] = x[c * N + t] - shift[c]);
    m /= static_cast<T>(N);
    T v = 0;
    for (std::size_t t = 0; t < N; ++t) v += (shifted[c * N + t] - m) * (shifted[c * N + t] - m);
    sigma[c] = std::sqrt(v / static_cast<T>(N));
  }
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = 0; j < C; ++j) gain[i] += wsc[i * C + j] * sigma[j];
  }
  Tensor<T> ss{chain[1], std::vector<T>(C * N)};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < N; ++t) ss.data[c * N + t] = shifted[c * N + t] * gain[c];
  }
  layers.push_back(ss);

  const auto w1 = tensor(Param::Conv1W);
  const auto b1 = tensor(Param::Conv1B);
  Tensor<T> c1{chain[2], std::vector<T>(F * C * L1)};
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < L1; ++t) {
        T acc = b1[f];
        for (std::size_t i = 0; i < k1; ++i) acc += w1[f * k1 + i] * ss.data[c * N + t + i];
        c1.data[(f * C + c) * L1 + t] = acc;
      }
    }
  }
  layers.push_back(c1);

  const auto w2 = tensor(Param::Conv2W);
  const auto b2 = tensor(Param::Conv2B);
  Tensor<T> c2{chain[3], std::vector<T>(F * L2)};
  for (std::size_t o = 0; o < F; ++o) {
    for (std::size_t t = 0; t < L2; ++t) {
      T acc = b2[o];
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t j = 0; j < k2; ++j) {
            acc += w2[((o * F + f) * C + c) * k2 + j] * c1.data[(f * C + c) * L1 + t + j];
          }
        }
      }
      c2.data[o * L2 + t] = acc;
    }
  }
  layers.push_back(c2);

  Tensor<T> sq{chain[4], c2.data};
  for (auto& v : sq.data) v = v * v;
  layers.push_back(sq);

  Tensor<T> pool{chain[5], std::vector<T>(F * L3)};
  for (std::size_t o = 0; o < F; ++o) {
    for (std::size_t w = 0; w < L3; ++w) {
      T acc = 0;
      for (std::size_t t = 0; t < s.pool_kernel; ++t) acc += sq.data[o * L2 + w * s.pool_stride + t];
      pool.data[o * L3 + w] = acc / static_cast<T>(s.pool_kernel);
    }
  }
  layers.push_back(pool);

  Tensor<T> lg{chain[6], pool.data};
  for (auto& v : lg.data) v = std::log(std::max(v, static_cast<T>(s.log_eps)));
  layers.push_back(lg);
  layers.push_back({chain[7], lg.data});  // dropout is the identity in eval mode

  const auto w3 = tensor(Param::OutW);
  const auto b3 = tensor(Param::OutB);
  Tensor<T> logits{chain[8], std::vector<T>(NC)};
  for (std::size_t cl = 0; cl < NC; ++cl) {
    T acc = b3[cl];
    for (std::size_t i = 0; i < F * KC; ++i) acc += w3[cl * F * KC + i] * lg.data[i];
    logits.data[cl] = acc;
  }
  layers.push_back(logits);

  Tensor<T> prob{chain[9], logits.data};
  const T zmax = *std::max_element(prob.data.begin(), prob.data.end());
  T denom = 0;
  for (auto& v : prob.data) denom += (v = std::exp(v - zmax));
  for (auto& v : prob.data) v /= denom;
  layers.push_back(prob);
  return layers;
}

template <typename T>
T Network<T>::loss_and_gradient(std::span<const std::vector<T>> inputs, std::span<const int> labels,
                                std::span<T> grad, Mode mode, std::uint64_t dropout_seed,
                                std::size_t* n_correct) const {
  const auto& s = shape_;
  const std::size_t C = s.n_channels, N = s.n_samples, F = s.n_filters, K = s.composed_kernel();
  const std::size_t k1 = s.temporal_kernel, k2 = s.spatial_time_kernel;
  const std::size_t L2 = s.conv2_len(), L3 = s.pooled_len(), P = s.pool_kernel, S = s.pool_stride;
  const std::size_t NC = s.n_classes, KC = s.classifier_kernel;
  if (grad.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size");
  if (inputs.size() != labels.size() || inputs.empty()) {
    throw Error(ErrorCode::InvalidArgument, "batch needs matching, non-empty inputs and labels");
  }
  std::fill(grad.begin(), grad.end(), T(0));

  const auto k = compose();
  const auto wsh = tensor(Param::Shift);
  const auto wsc = tensor(Param::Scale);
  const auto w3 = tensor(Param::OutW);
  auto g_shift = grad.subspan(tensor_offset(Param::Shift), C * C);
  auto g_scale = grad.subspan(tensor_offset(Param::Scale), C * C);
  auto g_w3 = grad.subspan(tensor_offset(Param::OutW), NC * F * KC);
  auto g_b3 = grad.subspan(tensor_offset(Param::OutB), NC);
  (void)wsh;

  std::vector<T> d_kernel(F * C * K, T(0));
  std::vector<T> d_bias(F, T(0));
  const T inv_b = T(1) / static_cast<T>(inputs.size());
  const T eps = static_cast<T>(s.log_eps);
  T total_loss = 0;
  if (n_correct) *n_correct = 0;

  Workspace ws;
  std::vector<T> dz(NC), dlog(F * L3), dgain(C), dsigma(C), dshift(C);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= NC) throw Error(ErrorCode::InvalidArgument, "label out of range");
    forward_example(k, inputs[b], mode == Mode::Train, derive_seed(dropout_seed, b), ws);

    const T zmax = *std::max_element(ws.logits.begin(), ws.logits.end());
    T lse = 0;
    for (auto z : ws.logits) lse += std::exp(z - zmax);
    total_loss += std::log(lse) + zmax - ws.logits[static_cast<std::size_t>(y)];
    if (n_correct && std::max_element(ws.prob.begin(), ws.prob.end()) - ws.prob.begin() == y) ++*n_correct;

    for (std::size_t cl = 0; cl < NC; ++cl) dz[cl] = (ws.prob[cl] - (static_cast<int>(cl) == y ? T(1) : T(0))) * inv_b;

    // Classifier.
    std::fill(dlog.begin(), dlog.end(), T(0));
    for (std::size_t cl = 0; cl < NC; ++cl) {
      g_b3[cl] += dz[cl];
      for (std::size_t i = 0; i < F * KC; ++i) {
        g_w3[cl * F * KC + i] += dz[cl] * ws.dropped[i];
        dlog[i] += w3[cl * F * KC + i] * dz[cl];
      }
    }

    // Dropout, log clamp, average pool, square.
    ws.dout2.assign(F * L2, T(0));
    for (std::size_t o = 0; o < F; ++o) {
      for (std::size_t w = 0; w < L3; ++w) {
        const std::size_t i = o * L3 + w;
        const T p = ws.pooled[i];
        const T dp = p > eps ? dlog[i] * ws.mask[i] / p : T(0);
        const T dq = dp / static_cast<T>(P);
        for (std::size_t t = w * S; t < w * S + P; ++t) ws.dout2[o * L2 + t] += dq;
      }
      for (std::size_t t = 0; t < L2; ++t) ws.dout2[o * L2 + t] *= T(2) * ws.out2[o * L2 + t];
    }

    // Composed convolution: kernel gradient and input gradient.
    ws.dxp.assign(C * N, T(0));
    for (std::size_t o = 0; o < F; ++o) {
      const T* __restrict dout = &ws.dout2[o * L2];
      T acc = 0;
      for (std::size_t t = 0; t < L2; ++t) acc += dout[t];
      d_bias[o] += acc;
      for (std::size_t c = 0; c < C; ++c) {
        const T* xr = &ws.xp[c * N];
        T* __restrict dk = &d_kernel[(o * C + c) * K];
        const T* kr = &k.kernel[(o * C + c) * K];
        T* dxr = &ws.dxp[c * N];
        for (std::size_t t = 0; t < L2; ++t) {
          const T g = dout[t];
          const T* __restrict src = xr + t;
          for (std::size_t u = 0; u < K; ++u) dk[u] += g * src[u];
        }
        for (std::size_t u = 0; u < K; ++u) {
          const T w = kr[u];
          T* __restrict dst = dxr + u;
          for (std::size_t t = 0; t < L2; ++t) dst[t] += w * dout[t];
        }
      }
    }

    // Shift/scale.
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      for (std::size_t t = 0; t < N; ++t) acc += ws.dxp[c * N + t] * ws.shifted[c * N + t];
      dgain[c] = acc;
    }
    std::fill(dsigma.begin(), dsigma.end(), T(0));
    for (std::size_t i = 0; i < C; ++i) {
      for (std::size_t j = 0; j < C; ++j) {
        g_scale[i * C + j] += dgain[i] * ws.sigma[j];
        dsigma[j] += wsc[i * C + j] * dgain[i];
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      const T sig_coef = ws.sigma[c] > T(0) ? dsigma[c] / (static_cast<T>(N) * ws.sigma[c]) : T(0);
      for (std::size_t t = 0; t < N; ++t) {
        const T du = ws.dxp[c * N + t] * ws.gain[c] + sig_coef * (ws.shifted[c * N + t] - ws.ubar[c]);
        acc += du;
      }
      dshift[c] = -acc;
    }
    for (std::size_t i = 0; i < C; ++i) {
      for (std::size_t j = 0; j < C; ++j) g_shift[i * C + j] += dshift[i] * ws.mean[j];
    }
  }

  // Map composed-kernel gradients back to the two convolution layers.
  const auto w1 = tensor(Param::Conv1W);
  const auto b1 = tensor(Param::Conv1B);
  const auto w2 = tensor(Param::Conv2W);
  auto g_w1 = grad.subspan(tensor_offset(Param::Conv1W), F * k1);
  auto g_b1 = grad.subspan(tensor_offset(Param::Conv1B), F);
  auto g_w2 = grad.subspan(tensor_offset(Param::Conv2W), F * F * C * k2);
  auto g_b2 = grad.subspan(tensor_offset(Param::Conv2B), F);
  for (std::size_t o = 0; o < F; ++o) {
    g_b2[o] = d_bias[o];
    for (std::size_t f = 0; f < F; ++f) {
      g_b1[f] += d_bias[o] * k.w2_sum[o * F + f];
      for (std::size_t c = 0; c < C; ++c) {
        const T* dk = &d_kernel[(o * C + c) * K];
        const std::size_t w2_base = ((o * F + f) * C + c) * k2;
        for (std::size_t j = 0; j < k2; ++j) {
          T acc = d_bias[o] * b1[f];
          for (std::size_t i = 0; i < k1; ++i) {
            acc += dk[j + i] * w1[f * k1 + i];
            g_w1[f * k1 + i] += dk[j + i] * w2[w2_base + j];
          }
          g_w2[w2_base + j] = acc;
        }
      }
    }
  }
  return total_loss * inv_b;
}

template <typename T>
T Network<T>::loss(std::span<const std::vector<T>> inputs, std::span<const int> labels) const {
  if (inputs.size() != labels.size() || inputs.empty()) {
    throw Error(ErrorCode::InvalidArgument, "batch needs matching, non-empty inputs and labels");
  }
  const auto k = compose();
  Workspace ws;
  T total = 0;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    forward_example(k, inputs[b], false, 0, ws);
    const T zmax = *std::max_element(ws.logits.begin(), ws.logits.end());
    T lse = 0;
    for (auto z : ws.logits) lse += std::exp(z - zmax);
    total += std::log(lse) + zmax - ws.logits[static_cast<std::size_t>(labels[b])];
  }
  return total / static_cast<T>(inputs.size());
}

template class Network<float>;
template class Network<double>;

std::vector<float> flatten(const Epoch& e) { return e.samples.data(); }

int predict_class(const Network<float>& net, std::span<const float> x) {
  const auto p = net.forward(x, Mode::Eval);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace {

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One composed-kernel pass over a data set in eval mode.
EvalStats evaluate_set(const Network<float>& net, std::span<const std::vector<float>> xs, std::span<const int> ys) {
  EvalStats st;
  if (xs.empty()) return st;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = net.forward(xs[i], Mode::Eval);
    const auto pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += pred == ys[i] ? 1 : 0;
    loss -= std::log(std::max(static_cast<double>(p[static_cast<std::size_t>(ys[i])]), 1e-30));
  }
  st.loss = loss / static_cast<double>(xs.size());
  st.accuracy = static_cast<double>(correct) / static_cast<double>(xs.size());
  return st;
}

void check_labels(std::span<const int> ys, std::size_t n_classes) {
  std::vector<bool> seen(n_classes, false);
  for (int y : ys) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw Error(ErrorCode::InvalidArgument, "label out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw Error(ErrorCode::DegenerateLabels, "training needs at least two classes");
  }
}

}  // namespace

CnnTrainResult train_cnn(std::span<const std::vector<float>> train_x, std::span<const int> train_y,
                         std::span<const std::vector<float>> val_x, std::span<const int> val_y,
                         const TrainConfig& cfg, const NetworkShape& shape) {
  if (train_x.size() != train_y.size() || val_x.size() != val_y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "inputs and labels differ in count");
  }
  check_labels(train_y, shape.n_classes);
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "batch size and learning rate must be positive");
  }

  CnnTrainResult result{Network<float>(shape), {}, 0, 0.0};
  auto& net = result.model;

  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  {
    const std::size_t n_cal = std::min(cfg.batch_size, order.size());
    std::vector<std::vector<float>> calibration;
    for (std::size_t i = 0; i < n_cal; ++i) calibration.push_back(train_x[order[i]]);
    net.initialize(derive_seed(cfg.seed, "init"), calibration);
  }
  if (cfg.max_epochs == 0) return result;

  const std::size_t n_params = net.parameter_count();
  std::vector<float> grad(n_params), m1(n_params, 0.0f), m2(n_params, 0.0f);
  std::vector<float> best = std::vector<float>(net.params().begin(), net.params().end());
  double best_acc = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::vector<std::vector<float>> batch_x;
  std::vector<int> batch_y;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (epoch > 1) std::shuffle(order.begin(), order.end(), shuffle_rng);
    const auto epoch_seed = derive_seed(derive_seed(cfg.seed, "dropout"), epoch);
    double loss_sum = 0.0;
    std::size_t correct_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_x.push_back(train_x[order[i]]);
        batch_y.push_back(train_y[order[i]]);
      }
      std::size_t correct = 0;
      const float l =
          net.loss_and_gradient(batch_x, batch_y, grad, Mode::Train, derive_seed(epoch_seed, batch_index), &correct);
      loss_sum += static_cast<double>(l) * static_cast<double>(end - start);
      correct_sum += correct;

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto p = net.params();
      for (std::size_t i = 0; i < n_params; ++i) {
        m1[i] = static_cast<float>(cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i]);
        m2[i] = static_cast<float>(cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i]);
        const double mhat = m1[i] / bc1;
        const double vhat = m2[i] / bc2;
        p[i] = static_cast<float>(p[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct_sum) / static_cast<double>(order.size());
    const auto val = val_x.empty() ? EvalStats{rec.train_loss, rec.train_accuracy} : evaluate_set(net, val_x, val_y);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    result.history.push_back(rec);

    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      best.assign(net.params().begin(), net.params().end());
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  std::copy(best.begin(), best.end(), net.params().begin());
  result.best_val_accuracy = best_acc;
  return result;
}

CnnTrainResult train_cnn(std::span<const Epoch> epochs, const TrainConfig& cfg) {
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "validation fraction must lie in (0, 1)");
  }
  std::vector<int> labels;
  for (const auto& e : epochs) labels.push_back(static_cast<int>(e.difficulty));
  check_labels(labels, kNumClasses);

  // Stratified hold-out.
  Rng rng(derive_seed(cfg.seed, "validation"));
  std::vector<std::vector<float>> tx, vx;
  std::vector<int> ty, vy;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (labels[i] == c) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& xs = k < n_val ? vx : tx;
      auto& ys = k < n_val ? vy : ty;
      xs.push_back(flatten(epochs[idx[k]]));
      ys.push_back(c);
    }
  }
  NetworkShape shape = NetworkShape::standard();
  if (!epochs.empty()) {
    shape.n_channels = epochs.front().samples.rows();
    shape.n_samples = epochs.front().samples.cols();
  }
  return train_cnn(tx, ty, vx, vy, cfg, shape);
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& header_path) {
  using nlohmann::json;
  const auto& s = net.shape();
  auto blob_path = header_path;
  blob_path.replace_extension(".f32");
  json tensors = json::array();
  for (std::size_t p = 0; p < kNumParams; ++p) {
    const auto param = static_cast<Param>(p);
    tensors.push_back({{"name", param_name(param)},
                       {"shape", net.tensor_shape(param)},
                       {"offset", net.tensor_offset(param)},
                       {"count", net.tensor(param).size()}});
  }
  const auto chain = s.shape_chain();
  json j = {{"format", "eegtask-cnn-1"},
            {"byte_order", "little"},
            {"dtype", "f32"},
            {"data_file", blob_path.filename().string()},
            {"parameter_count", net.parameter_count()},
            {"layers",
             {"ShiftScale", "Conv(1x" + std::to_string(s.temporal_kernel) + ", N=" + std::to_string(s.n_filters) + ")",
              "Conv(" + std::to_string(s.n_channels) + "x" + std::to_string(s.spatial_time_kernel) +
                  ", N=" + std::to_string(s.n_filters) + ")",
              "Square", "AvgPool(1x" + std::to_string(s.pool_kernel) + ", S=1x" + std::to_string(s.pool_stride) + ")",
              "Log", "Dropout(" + std::to_string(s.dropout) + ")",
              "Conv(1x" + std::to_string(s.classifier_kernel) + ", N=" + std::to_string(s.n_classes) + ")",
              "Softmax"}},
            {"shape_chain", chain},
            {"shape",
             {{"n_channels", s.n_channels},
              {"n_samples", s.n_samples},
              {"temporal_kernel", s.temporal_kernel},
              {"n_filters", s.n_filters},
              {"spatial_time_kernel", s.spatial_time_kernel},
              {"pool_kernel", s.pool_kernel},
              {"pool_stride", s.pool_stride},
              {"classifier_kernel", s.classifier_kernel},
              {"n_classes", s.n_classes},
              {"log_eps", s.log_eps},
              {"dropout", s.dropout}}},
            {"tensors", tensors}};
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  detail::write_f32_le(blob, net.params());
  std::ofstream header(header_path, std::ios::trunc);
  header << j.dump(2) << '\n';
  if (!blob || !header) throw Error(ErrorCode::IoFailure, "cannot write checkpoint " + header_path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& header_path) {
  using nlohmann::json;
  std::ifstream in(header_path);
  if (!in) throw Error(ErrorCode::MissingFile, header_path.string());
  json j;
  try {
    in >> j;
    if (j.at("format") != "eegtask-cnn-1" || j.at("byte_order") != "little" || j.at("dtype") != "f32") {
      throw Error(ErrorCode::InvalidManifest, "unsupported checkpoint format");
    }
    const auto& js = j.at("shape");
    NetworkShape s;
    s.n_channels = js.at("n_channels");
    s.n_samples = js.at("n_samples");
    s.temporal_kernel = js.at("temporal_kernel");
    s.n_filters = js.at("n_filters");
    s.spatial_time_kernel = js.at("spatial_time_kernel");
    s.pool_kernel = js.at("pool_kernel");
    s.pool_stride = js.at("pool_stride");
    s.classifier_kernel = js.at("classifier_kernel");
    s.n_classes = js.at("n_classes");
    s.log_eps = js.at("log_eps");
    s.dropout = js.at("dropout");
    Network<float> net(s);
    if (j.at("parameter_count").get<std::size_t>() != net.parameter_count()) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter count disagrees with its shape");
    }
    const auto blob_path = header_path.parent_path() / j.at("data_file").get<std::string>();
    std::error_code ec;
    const auto size = std::filesystem::file_size(blob_path, ec);
    if (ec) throw Error(ErrorCode::MissingFile, blob_path.string());
    if (size != net.parameter_count() * 4) throw Error(ErrorCode::LengthMismatch, blob_path.string());
    std::ifstream blob(blob_path, std::ios::binary);
    detail::read_f32_le(blob, net.params());
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, header_path.string() + ": " + e.what());
  }
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::string out = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.train_accuracy, r.val_loss,
                  r.val_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace eegtask
