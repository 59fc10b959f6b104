// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skullnet/matrix.hpp"
#include "skullnet/nn.hpp"
#include "skullnet/tensor.hpp"

namespace skullnet {

inline constexpr double kProbabilityClip = 1e-7;

enum class OptimizerKind { kSgd, kAdam };

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument unless each ratio is in [0, 1] and they sum to 1.
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t epochs = 7;  // about 85 s per epoch on 300 images on one core
  std::size_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 42;
  std::optional<std::size_t> early_stop_patience = 3;
  float leaky_slope = kDefaultLeakySlope;
  SplitSpec split;

  void validate() const;
};

/// Parses a key=value file. Recognized keys: learning_rate, epochs,
/// batch_size, optimizer (sgd|adam), seed, early_stop_patience (integer or
/// "none"), leaky_slope, split (three comma-separated ratios). '#' starts a
/// comment. Unknown keys and malformed values raise ValidationError.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainHistory {
  std::vector<double> train_loss;
  /// NaN for epochs trained without validation data.
  std::vector<double> val_loss;
  /// Epoch (1-based) whose parameters were kept; 0 if none ran.
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  std::size_t epochs() const { return train_loss.size(); }
};

/// Images paired with their label rows.
struct TrainingSet {
  std::vector<Tensor> images;
  LabelMatrix labels;

  std::size_t size() const { return images.size(); }
};

// --- loss --------------------------------------------------------------------

/// Mean binary cross-entropy over all entries, probabilities clipped to
/// [kProbabilityClip, 1 - kProbabilityClip].
double bce_loss(const ScoreMatrix& probabilities, const LabelMatrix& labels);

/// dLoss/dlogit of the mean-reduced sigmoid + BCE composite: (p - y) / (n * L).
ScoreMatrix bce_sigmoid_grad(const ScoreMatrix& probabilities, const LabelMatrix& labels);

// --- optimizers --------------------------------------------------------------

/// Applies updates to a fixed list of parameter blocks. Adam uses
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8 with bias correction.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  /// Throws NumericError (leaving params untouched) if any gradient is not finite.
  void step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads);

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

// --- training ----------------------------------------------------------------

/// Called after each epoch with (epoch, train_loss, val_loss).
using EpochCallback = std::function<void(std::size_t, double, double)>;

/// Mini-batch training with a seeded reshuffle every epoch. Per-sample
/// gradients are computed in parallel and summed in sample order, so the
/// result does not depend on the thread count. With validation data and a
/// patience, training stops once validation loss has not improved for that
/// many epochs and the best-epoch parameters are restored.
TrainHistory train(ModelParams& model, const TrainingSet& train_set, const TrainingSet* val_set,
                   const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean BCE of the model's sigmoid head over a data set.
double evaluate_loss(const ModelParams& model, const TrainingSet& data);

// --- splitting ---------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of groups (each sample is its own group when `group_keys`
/// is empty), then a contiguous cut: groups are dealt to test until it holds
/// floor(n * test) samples, then to val likewise, the rest to train. Without
/// grouping the sizes are exact. Index lists are returned sorted.
Split split_dataset(std::size_t n, const SplitSpec& spec,
                    std::span<const std::string> group_keys = {});

// --- gradient checking -------------------------------------------------------

enum class LayerKind { kConv, kLeakyRelu, kMaxPool, kDense, kSigmoidBce };

/// max |a - n| / max(|a|, |n|) over element pairs; a pair of zeros counts as 0.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Builds a random small instance of `kind` (6x6x2 conv with 2 filters,
/// 5x5x1 pooling, length-10 dense head, ...), evaluates the analytic
/// gradients in double precision and compares them against central finite
/// differences with step `epsilon`. Returns the max relative error over all
/// inputs and parameters.
double grad_check(LayerKind kind, Rng& rng, double epsilon = 1e-3);

std::string to_string(LayerKind kind);

}  // namespace skullnet
