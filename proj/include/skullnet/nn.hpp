// SPDX-License-Identifier: Apache-2.0
//
// The baseline CNN: four blocks of two same-padded 3x3 convolutions with
// leaky-ReLU activations, each block followed by a 2x2 stride-2 max-pool.
// Filter counts double per block (32, 64, 128, 256). For a 200x200x3 input
// the final pool is 12x12x256, flattened to a 36864-dim feature vector that
// feeds either the dense sigmoid head (training) or the ML-KNN classifier.
//
// Layer kernels are templated on the scalar type so the same code can be
// checked against finite differences in double precision; the model itself
// stores float32.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skullnet/tensor.hpp"

namespace skullnet {

inline constexpr std::size_t kImageSize = 200;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kNumLabels = 7;
inline constexpr std::array<std::size_t, 8> kConvChannels = {32, 32, 64, 64, 128, 128, 256, 256};
inline constexpr std::size_t kFeatureDim = 12 * 12 * 256;  // 36864
inline constexpr float kDefaultLeakySlope = 0.01f;

template <typename T>
struct BasicConvLayer {
  BasicTensor<T> kernels;  // (3, 3, C_in, C_out)
  std::vector<T> bias;     // C_out

  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }
  std::size_t param_count() const { return kernels.size() + bias.size(); }

  bool operator==(const BasicConvLayer&) const = default;
};

template <typename T>
struct BasicDenseLayer {
  BasicTensor<T> weights;  // (in_dim, out_dim)
  std::vector<T> bias;     // out_dim

  std::size_t in_dim() const { return weights.dim(0); }
  std::size_t out_dim() const { return weights.dim(1); }
  std::size_t param_count() const { return weights.size() + bias.size(); }

  bool operator==(const BasicDenseLayer&) const = default;
};

using ConvLayer = BasicConvLayer<float>;
using DenseLayer = BasicDenseLayer<float>;

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx;  // empty when not requested
  BasicTensor<T> dkernels;
  std::vector<T> dbias;
};

template <typename T>
struct DenseGrads {
  std::vector<T> dx;
  BasicTensor<T> dweights;
  std::vector<T> dbias;
};

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  /// Flat input index of the winning element for every output element.
  std::vector<std::uint32_t> argmax;
};

// --- layer kernels -----------------------------------------------------------

/// Same-padded, stride-1 3x3 cross-correlation plus bias.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicConvLayer<T>& layer);

/// Gradients of conv2d_forward given its input and the output gradient.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                             const BasicTensor<T>& dy, bool need_dx = true);

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);

template <typename T>
void leaky_relu_inplace(BasicTensor<T>& x, T slope);

/// dy scaled by 1 where the forward input was >= 0 and by `slope` elsewhere.
template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& dy, T slope);

/// 2x2 stride-2 max pooling; an odd trailing row/column is dropped. Ties go
/// to the smallest flat input index.
template <typename T>
PoolResult<T> maxpool2_forward(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> maxpool2_backward(const BasicTensor<T>& dy, std::span<const std::uint32_t> argmax,
                                 const Shape& input_shape);

/// Row-major flattening of an (H, W, C) tensor: (i, j, c) -> (i * W + j) * C + c.
template <typename T>
std::vector<T> flatten(const BasicTensor<T>& x);

/// Inverse of flatten.
template <typename T>
BasicTensor<T> unflatten(std::span<const T> features, const Shape& shape);

template <typename T>
std::vector<T> dense_forward(std::span<const T> features, const BasicDenseLayer<T>& layer);

template <typename T>
DenseGrads<T> dense_backward(std::span<const T> features, const BasicDenseLayer<T>& layer,
                             std::span<const T> dlogits);

template <typename T>
T sigmoid(T z);

/// Independent per-label probabilities sigma(W^T f + b); no softmax.
template <typename T>
std::vector<T> dense_sigmoid_head(std::span<const T> features, const BasicDenseLayer<T>& head);

// --- model -------------------------------------------------------------------

/// Layer sizes for build_model. Convolutions come in pairs; a max-pool
/// follows every pair.
struct Architecture {
  Shape input_shape{kImageSize, kImageSize, kImageChannels};
  std::vector<std::size_t> conv_channels{kConvChannels.begin(), kConvChannels.end()};
  std::size_t num_labels = kNumLabels;
  float leaky_slope = kDefaultLeakySlope;
};

struct ModelParams {
  Shape input_shape;
  std::vector<ConvLayer> conv;
  DenseLayer head;
  float leaky_slope = kDefaultLeakySlope;

  /// Every trainable array in a fixed order: conv kernels and biases layer
  /// by layer, then head weights and bias.
  std::vector<std::span<float>> parameter_blocks();
  std::vector<std::span<const float>> parameter_blocks() const;

  std::size_t feature_dim() const { return head.in_dim(); }
  Shape feature_shape() const;

  bool operator==(const ModelParams&) const = default;
};

/// Output shape of every stage plus parameter counts, in network order.
struct LayerSummary {
  std::string name;
  Shape activation_shape;
  std::size_t parameters = 0;
};

std::vector<LayerSummary> summarize(const ModelParams& params);

/// He-normal kernels and head weights, zero biases.
ModelParams build_model(Rng& rng, const Architecture& arch);

/// The 200x200x3 -> 36864 extractor with a 7-label sigmoid head.
ModelParams build_extractor(Rng& rng, float leaky_slope = kDefaultLeakySlope);

/// A zero-filled parameter set with the same layout (gradient accumulator).
ModelParams zeros_like(const ModelParams& params);

/// Trainable parameters of the convolution stack; the head is excluded.
std::size_t count_params(const ModelParams& params);
std::size_t head_param_count(const ModelParams& params);

/// Forward pass through the convolution stack up to and including flatten.
std::vector<float> extract_features(const ModelParams& params, const Tensor& image);

/// Activations retained by forward_train for the backward pass.
struct ForwardCache {
  std::vector<Tensor> conv_inputs;
  std::vector<Tensor> pre_activations;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<Shape> pool_input_shapes;
  std::vector<float> features;
  std::vector<float> logits;
  std::vector<float> probabilities;
};

ForwardCache forward_train(const ModelParams& params, const Tensor& image);

/// Parameter gradients for one sample given dLoss/dlogits.
ModelParams backward(const ModelParams& params, const ForwardCache& cache,
                     std::span<const float> dlogits);

}  // namespace skullnet
