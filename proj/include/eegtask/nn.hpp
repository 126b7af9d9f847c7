#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eegtask/dsp.hpp"

namespace eegtask {

/// Fixed layer stack:
///   ShiftScale -> Conv(1 x k1, F filters) -> Conv(C x k2, F filters)
///   -> Square -> AvgPool(1 x pool, stride) -> Log(clamp eps) -> Dropout
///   -> Conv(1 x L, n_classes) -> Softmax
/// where L is the pooled length, so the classifier collapses time to 1.
struct NetworkShape {
  std::size_t n_channels = 20;
  std::size_t n_samples = 512;
  std::size_t temporal_kernel = 30;
  std::size_t n_filters = 10;
  std::size_t spatial_time_kernel = 40;
  std::size_t pool_kernel = 150;
  std::size_t pool_stride = 30;
  std::size_t classifier_kernel = 10;
  std::size_t n_classes = 3;
  double log_eps = 1e-6;
  double dropout = 0.2;

  static NetworkShape standard() { return {}; }
  /// 4 channels x 64 samples with the same layer types, for gradient checks.
  static NetworkShape reduced();

  std::size_t conv1_len() const;
  std::size_t conv2_len() const;
  std::size_t pooled_len() const;
  std::size_t composed_kernel() const { return temporal_kernel + spatial_time_kernel - 1; }

  /// Activation shapes after each layer, starting with the input.
  std::vector<std::vector<std::size_t>> shape_chain() const;
  std::size_t parameter_count() const;

  /// Throws ShapeMismatch unless every layer has a positive output extent
  /// and the classifier output is exactly [n_classes x 1 x 1].
  void validate() const;
};

/// Dense tensor, row-major.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;
};

enum class Param : std::size_t { Shift, Scale, Conv1W, Conv1B, Conv2W, Conv2B, OutW, OutB };
inline constexpr std::size_t kNumParams = 8;

std::string_view param_name(Param p);

enum class Mode { Eval, Train };

/// The network's parameters in one flat vector with per-tensor views.
template <typename T>
class Network {
 public:
  explicit Network(NetworkShape shape = NetworkShape::standard());

  const NetworkShape& shape() const noexcept { return shape_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }
  std::span<T> tensor(Param p);
  std::span<const T> tensor(Param p) const;
  std::vector<std::size_t> tensor_shape(Param p) const;
  std::size_t tensor_offset(Param p) const { return offsets_[static_cast<std::size_t>(p)]; }

  /// Shift = identity, scale = diag(1 / (var_c + 1e-6)) with var_c the
  /// per-channel variance over `calibration` inputs, convolutions
  /// Glorot-uniform, biases zero.
  void initialize(std::uint64_t seed, std::span<const std::vector<T>> calibration);

  /// Class probabilities for one [n_channels x n_samples] input. In Train
  /// mode dropout uses a mask drawn from `dropout_seed`.
  std::vector<T> forward(std::span<const T> x, Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0) const;

  /// Layer-by-layer evaluation without the fused convolution path; returns
  /// every activation (input first, probabilities last). Eval mode.
  std::vector<Tensor<T>> forward_layers(std::span<const T> x) const;

  /// Mean cross-entropy over the batch; `grad` receives the mean gradient
  /// with respect to params(). Dropout is applied iff mode == Train, with
  /// example b masked by derive_seed(dropout_seed, b). A non-null `n_correct`
  /// receives the number of examples whose forward pass ranks the true class first.
  T loss_and_gradient(std::span<const std::vector<T>> inputs, std::span<const int> labels, std::span<T> grad,
                      Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0,
                      std::size_t* n_correct = nullptr) const;

  /// Mean cross-entropy without gradients (Eval mode).
  T loss(std::span<const std::vector<T>> inputs, std::span<const int> labels) const;

 private:
  struct Composed;
  struct Workspace;
  Composed compose() const;
  void forward_example(const Composed& k, std::span<const T> x, bool dropout, std::uint64_t seed,
                       Workspace& ws) const;

  NetworkShape shape_;
  std::vector<T> params_;
  std::array<std::size_t, kNumParams + 1> offsets_{};
};

extern template class Network<float>;
extern template class Network<double>;

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;  // epochs without validation-accuracy improvement
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct CnnTrainResult {
  Network<float> model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
  double best_val_accuracy = 0.0;
};

/// Adam on mean cross-entropy with early stopping; returns the parameters
/// from the epoch with the best validation accuracy.
CnnTrainResult train_cnn(std::span<const std::vector<float>> train_x, std::span<const int> train_y,
                         std::span<const std::vector<float>> val_x, std::span<const int> val_y,
                         const TrainConfig& cfg, const NetworkShape& shape = NetworkShape::standard());

/// Holds out cfg.validation_fraction of the epochs (seeded) for early stopping.
CnnTrainResult train_cnn(std::span<const Epoch> epochs, const TrainConfig& cfg);

std::vector<float> flatten(const Epoch& e);

/// Predicted class (argmax, lowest index on ties) of a trained model.
int predict_class(const Network<float>& net, std::span<const float> x);

/// Checkpoint: `<stem>.json` header (layer list, shapes, tensor offsets) and
/// `<stem>.f32` little-endian parameter blob.
void save_checkpoint(const Network<float>& net, const std::filesystem::path& header_path);
Network<float> load_checkpoint(const std::filesystem::path& header_path);

/// Training history as comma-separated text.
std::string history_csv(std::span<const EpochRecord> history);

}  // namespace eegtask
