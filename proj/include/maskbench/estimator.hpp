#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maskbench/featureio.hpp"
#include "maskbench/masking.hpp"
#include "maskbench/signal.hpp"

namespace maskbench {

/// Softmax-normalized layer weights over K feature layers.
struct FusionWeights {
  std::vector<double> logits;

  std::vector<double> weights() const;
};

/// Fixed, non-trainable transform applied to the fused features before the context window.
enum class InputTransform { none, log1p };

struct EstimatorConfig {
  std::size_t context = 2;  // frames on each side
  std::vector<std::size_t> hidden_dims = {256, 256};
  std::size_t layers = 1;      // K
  std::size_t input_dim = 0;   // D
  std::size_t sources = 1;     // S
  std::size_t bins = 257;      // F
  std::uint64_t seed = 0;
  /// When set, fusion is frozen to this single layer.
  std::optional<std::size_t> fixed_layer;
  InputTransform input_transform = InputTransform::none;
  std::size_t chunk_frames = 1000;
  double mask_ceiling = kDefaultMaskCeiling;
  /// STFT grid the predicted masks live on.
  StftConfig stft;

  std::size_t window_dim() const { return (2 * context + 1) * input_dim; }
  std::size_t output_dim() const { return sources * bins; }
  void validate() const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Gradient (or Adam moment) buffers, shaped like the trainable parameters.
struct ParamTensors {
  std::vector<double> fusion;
  std::vector<DenseLayer> layers;

  static ParamTensors zeros_like(const EstimatorConfig& config);
  ParamTensors& operator+=(const ParamTensors& other);
  ParamTensors& operator*=(double scale);
};

struct EstimatorParams {
  EstimatorConfig config;
  FusionWeights fusion;
  std::vector<DenseLayer> layers;  // hidden layers, then the output head
  std::uint64_t step = 0;
  ParamTensors adam_m;
  ParamTensors adam_v;

  bool all_finite() const;
};

/// Glorot-uniform weights, zero biases, zero fusion logits.
EstimatorParams init_params(const EstimatorConfig& config);

/// Convex combination of the K layers; column t of the result is frame t (D x T).
Eigen::MatrixXd fuse(const FeatureStack& stack, const FusionWeights& fusion);

/// Fusion as the estimator applies it (honours fixed_layer and input_transform).
Eigen::MatrixXd fuse_input(const EstimatorParams& params, const FeatureStack& stack);

/// Context-window network over fused features (D x T) -> S x T x F masks.
MaskSet forward(const EstimatorParams& params, const Eigen::MatrixXd& fused);

/// Convenience: forward(params, fuse_input(params, stack)).
MaskSet predict(const EstimatorParams& params, const FeatureStack& stack);

struct LossAndGrad {
  double loss = 0.0;
  ParamTensors gradients;
  std::vector<std::size_t> permutation;
};

/// PIT MSE against `target` with full backprop, including the fusion logits.
/// The permutation is chosen on the forward output and held fixed for the gradient.
LossAndGrad loss_and_grad(const EstimatorParams& params, const FeatureStack& stack,
                          const MaskSet& target);

struct TrainingExample {
  std::string id;
  FeatureStack features;  // aligned to the target frame grid
  MaskSet target;
};

struct TrainOptions {
  std::size_t steps = 150000;
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t dev_every = 500;
  std::size_t workers = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Higher is better. When absent the final parameters are returned.
  std::function<double(const EstimatorParams&)> dev_metric;
};

struct TrainLogEntry {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> dev_metric;
};

struct TrainResult {
  EstimatorParams best;
  EstimatorParams last;
  std::vector<TrainLogEntry> log;
  std::optional<double> best_dev_metric;
  std::uint64_t best_step = 0;
};

/// Adam training from `initial` (fresh or resumed). Deterministic for fixed inputs;
/// per-chunk gradients are reduced in a fixed order regardless of `workers`.
TrainResult train(const std::vector<TrainingExample>& data, const EstimatorParams& initial,
                  const TrainOptions& options);

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

inline constexpr char kCheckpointMagic[4] = {'M', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const EstimatorParams& params);
EstimatorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace maskbench
