#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pivuq/flowdata.hpp"

namespace pivuq {

/// Channel-major activation volume.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double* plane(int c) noexcept { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const double* plane(int c) const noexcept { return data.data() + static_cast<std::size_t>(c) * height * width; }
  double& at(int c, int y, int x) noexcept { return plane(c)[static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const noexcept { return plane(c)[static_cast<std::size_t>(y) * width + x]; }
};

/// 3x3 convolution with zero padding 1.
struct ConvLayer {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weights;  // [out][in][3][3]
  std::vector<double> bias;     // [out]
};

/// Log-sigma output range.
inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 6.0;

/// Small U-net: 4 input channels (frame A, frame B, u, v) -> enc 8 -> enc 16 (/2)
/// -> enc 32 (/4) -> dec 16 (+skip) -> dec 8 (+skip) -> head 2 (log sigma_u, log sigma_v).
class UnnModel {
 public:
  static constexpr int kInputChannels = 4;
  static constexpr int kLayerCount = 6;

  /// Glorot-uniform weights, zero biases.
  static UnnModel initialize(std::uint64_t seed);
  static UnnModel zeros();

  std::vector<ConvLayer>& layers() noexcept { return layers_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
  std::size_t parameter_count() const noexcept;

  /// Flat view helpers used by the optimizer and tests.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);

  void save(const std::filesystem::path& path) const;
  static UnnModel load(const std::filesystem::path& path);

  friend bool operator==(const UnnModel& a, const UnnModel& b);

 private:
  std::vector<ConvLayer> layers_;
};

bool operator==(const ConvLayer& a, const ConvLayer& b);

/// Activations kept for the reverse pass.
struct ForwardCache {
  Tensor input, enc1, enc2, enc3, cat2, dec2, cat1, dec1, head;
};

/// Network input with intensities scaled to [0, 1] and flow divided by `flow_scale`.
/// Spatial size is padded (reflect) up to a multiple of 4.
Tensor make_input(const ImagePair& pair, const FlowField& flow, double flow_scale);

/// Raw forward pass on a tensor whose height and width are multiples of 4.
/// Returns clamped log sigma with 2 channels.
Tensor forward_log_sigma(const UnnModel& model, const Tensor& input, ForwardCache* cache = nullptr);

/// Per-pixel uncertainty for an image pair and its predicted flow.
UncertaintyField forward(const UnnModel& model, const ImagePair& pair, const FlowField& flow,
                         double flow_scale = 10.0);

struct NllResult {
  double loss = 0.0;
  Grid<double> grad_log_sigma_u;  // dL/d(log sigma_u)
  Grid<double> grad_log_sigma_v;
};

/// Mean Gaussian negative log-likelihood over both components and all pixels:
/// (1/N) sum [log sigma + e^2 / (2 sigma^2)], N = 2 * pixels.
NllResult nll_loss(const UncertaintyField& sigma, const ErrorField& err);

/// Same loss straight from log sigma channels, gradients in a matching tensor.
double nll_loss_tensor(const Tensor& log_sigma, const Tensor& error, Tensor* grad);

/// Reverse pass. `grad_log_sigma` is dL/d(clamped log sigma); gradients are
/// returned in a model-shaped container.
UnnModel backward(const UnnModel& model, const ForwardCache& cache, const Tensor& grad_log_sigma);

struct TrainSample {
  ImagePair pair;
  FlowField pred;
  FlowField gt;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int steps = 300;
  int batch = 4;
  std::uint64_t seed = 0;
  int crop_size = 64;
  double flow_scale = 10.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainResult {
  UnnModel model;
  std::vector<double> loss_history;  // one minibatch loss per step
};

/// Raised when the loss exceeds 1e6 or becomes non-finite; carries the history so far.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& msg, std::vector<double> history)
      : NumericError(msg), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

TrainResult train(std::span<const TrainSample> dataset, const TrainConfig& cfg);

/// Mean NLL of the model over whole samples.
double dataset_loss(const UnnModel& model, std::span<const TrainSample> dataset, double flow_scale);

}  // namespace pivuq
