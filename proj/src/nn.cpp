// SPDX-License-Identifier: Apache-2.0
#include "skullnet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "skullnet/error.hpp"

namespace skullnet {

namespace {

template <typename T>
void require_rank3(const BasicTensor<T>& x, const char* op) {
  if (x.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected (H, W, C) tensor, got " +
                     shape_to_string(x.shape()));
  }
}

}  // namespace

// --- convolution -------------------------------------------------------------

namespace {

constexpr std::size_t kTileRows = 1024;

/// im2col restricted to output rows [r0, r1), written into `tile`.
template <typename T>
void im2col_rows(const BasicTensor<T>& x, std::size_t r0, std::size_t r1, std::vector<T>& tile) {
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  const std::size_t row_len = 9 * ch;
  tile.resize((r1 - r0) * row_len);
  const T* src = x.data().data();
  for (std::size_t r = r0; r < r1; ++r) {
    const long y = static_cast<long>(r / w), xx = static_cast<long>(r % w);
    T* row = tile.data() + (r - r0) * row_len;
    for (long ky = 0; ky < 3; ++ky) {
      const long sy = y + ky - 1;
      for (long kx = 0; kx < 3; ++kx) {
        const long sx = xx + kx - 1;
        T* cell = row + static_cast<std::size_t>(ky * 3 + kx) * ch;
        if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) {
          std::fill(cell, cell + ch, T{0});
        } else {
          const T* s = src + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ch;
          std::copy(s, s + ch, cell);
        }
      }
    }
  }
}

/// Adds patch rows [r0, r1) back into dx (adjoint of im2col_rows).
template <typename T>
void col2im_rows_add(const std::vector<T>& tile, std::size_t r0, std::size_t r1,
                     BasicTensor<T>& dx) {
  const std::size_t h = dx.dim(0), w = dx.dim(1), ch = dx.dim(2);
  const std::size_t row_len = 9 * ch;
  T* dst = dx.data().data();
  for (std::size_t r = r0; r < r1; ++r) {
    const long y = static_cast<long>(r / w), xx = static_cast<long>(r % w);
    const T* row = tile.data() + (r - r0) * row_len;
    for (long ky = 0; ky < 3; ++ky) {
      const long sy = y + ky - 1;
      if (sy < 0 || sy >= static_cast<long>(h)) continue;
      for (long kx = 0; kx < 3; ++kx) {
        const long sx = xx + kx - 1;
        if (sx < 0 || sx >= static_cast<long>(w)) continue;
        const T* cell = row + static_cast<std::size_t>(ky * 3 + kx) * ch;
        T* out = dst + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * ch;
        for (std::size_t c = 0; c < ch; ++c) out[c] += cell[c];
      }
    }
  }
}

template <typename T>
std::vector<T>& scratch_tile() {
  thread_local std::vector<T> tile;
  return tile;
}

}  // namespace

// The patch matrix is built kTileRows output pixels at a time into a
// per-thread buffer instead of materializing the full (H*W) x (9*C) matrix.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicConvLayer<T>& layer) {
  require_rank3(x, "conv2d_forward");
  if (x.dim(2) != layer.in_channels()) {
    throw ShapeError("conv2d_forward: input has " + std::to_string(x.dim(2)) +
                     " channels, layer expects " + std::to_string(layer.in_channels()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), cout = layer.out_channels();
  const std::size_t patch = 9 * x.dim(2);
  BasicTensor<T> y({h, w, cout});
  T* out = y.data().data();
  for (std::size_t p = 0; p < h * w; ++p) {
    std::copy(layer.bias.begin(), layer.bias.end(), out + p * cout);
  }
  auto& tile = scratch_tile<T>();
  for (std::size_t r0 = 0; r0 < h * w; r0 += kTileRows) {
    const std::size_t r1 = std::min(h * w, r0 + kTileRows);
    im2col_rows(x, r0, r1, tile);
    gemm<T>(false, false, r1 - r0, cout, patch, tile, layer.kernels.data(),
            y.data().subspan(r0 * cout, (r1 - r0) * cout), true);
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvLayer<T>& layer,
                             const BasicTensor<T>& dy, bool need_dx) {
  require_rank3(input, "conv2d_backward");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t cout = layer.out_channels();
  if (cin != layer.in_channels()) throw ShapeError("conv2d_backward: input channel mismatch");
  if (dy.shape() != Shape{h, w, cout}) {
    throw ShapeError("conv2d_backward: dy shape " + shape_to_string(dy.shape()) +
                     " does not match forward output " + shape_to_string({h, w, cout}));
  }

  ConvGrads<T> g;
  const std::size_t patch = 9 * cin;
  g.dkernels = BasicTensor<T>(layer.kernels.shape());
  g.dbias.assign(cout, T{0});
  const T* d = dy.data().data();
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t c = 0; c < cout; ++c) g.dbias[c] += d[p * cout + c];
  }
  if (need_dx) g.dx = BasicTensor<T>({h, w, cin});

  auto& tile = scratch_tile<T>();
  for (std::size_t r0 = 0; r0 < h * w; r0 += kTileRows) {
    const std::size_t r1 = std::min(h * w, r0 + kTileRows);
    const auto dy_rows = dy.data().subspan(r0 * cout, (r1 - r0) * cout);
    im2col_rows(input, r0, r1, tile);
    gemm<T>(true, false, patch, cout, r1 - r0, tile, dy_rows, g.dkernels.data(), true);
    if (need_dx) {
      tile.resize((r1 - r0) * patch);
      gemm<T>(false, true, r1 - r0, patch, cout, dy_rows, layer.kernels.data(), tile, false);
      col2im_rows_add(tile, r0, r1, g.dx);
    }
  }
  return g;
}

// --- activation --------------------------------------------------------------

template <typename T>
void leaky_relu_inplace(BasicTensor<T>& x, T slope) {
  for (auto& v : x.data()) v = v >= T{0} ? v : slope * v;
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  BasicTensor<T> y = x;
  leaky_relu_inplace(y, slope);
  return y;
}

template <typename T>
BasicTensor<T> leaky_relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& dy, T slope) {
  if (input.shape() != dy.shape()) throw ShapeError("leaky_relu_backward: shape mismatch");
  BasicTensor<T> dx = dy;
  auto in = input.data();
  auto out = dx.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (in[i] < T{0}) out[i] *= slope;
  }
  return dx;
}

// --- pooling -----------------------------------------------------------------

template <typename T>
PoolResult<T> maxpool2_forward(const BasicTensor<T>& x) {
  require_rank3(x, "maxpool2_forward");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2_forward: spatial size must be at least 2x2, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult<T> r{BasicTensor<T>({oh, ow, ch}), std::vector<std::uint32_t>(oh * ow * ch)};
  const T* in = x.data().data();
  T* out = r.output.data().data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t best = ((2 * oy) * w + 2 * ox) * ch + c;
        // Window scanned in increasing flat index; strict > keeps the first maximum.
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * ch + c;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (oy * ow + ox) * ch + c;
        out[o] = in[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2_backward(const BasicTensor<T>& dy, std::span<const std::uint32_t> argmax,
                                 const Shape& input_shape) {
  if (input_shape.size() != 3 || dy.rank() != 3 ||
      dy.shape() != Shape{input_shape[0] / 2, input_shape[1] / 2, input_shape[2]}) {
    throw ShapeError("maxpool2_backward: dy " + shape_to_string(dy.shape()) +
                     " does not match input " + shape_to_string(input_shape));
  }
  if (argmax.size() != dy.size()) throw ShapeError("maxpool2_backward: argmax size mismatch");
  BasicTensor<T> dx(input_shape);
  auto out = dx.data();
  auto d = dy.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (argmax[i] >= out.size()) throw ShapeError("maxpool2_backward: argmax out of range");
    out[argmax[i]] += d[i];
  }
  return dx;
}

// --- flatten / dense ---------------------------------------------------------

template <typename T>
std::vector<T> flatten(const BasicTensor<T>& x) {
  require_rank3(x, "flatten");
  return x.values();
}

template <typename T>
BasicTensor<T> unflatten(std::span<const T> features, const Shape& shape) {
  return BasicTensor<T>(shape, std::vector<T>(features.begin(), features.end()));
}

template <typename T>
T sigmoid(T z) {
  // Split on sign so exp never overflows.
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <typename T>
std::vector<T> dense_forward(std::span<const T> features, const BasicDenseLayer<T>& layer) {
  if (features.size() != layer.in_dim()) {
    throw ShapeError("dense layer expects " + std::to_string(layer.in_dim()) +
                     " features, got " + std::to_string(features.size()));
  }
  std::vector<T> logits(layer.bias);
  gemm<T>(false, false, 1, layer.out_dim(), layer.in_dim(), features, layer.weights.data(),
          std::span<T>(logits), true);
  return logits;
}

template <typename T>
DenseGrads<T> dense_backward(std::span<const T> features, const BasicDenseLayer<T>& layer,
                             std::span<const T> dlogits) {
  if (features.size() != layer.in_dim() || dlogits.size() != layer.out_dim()) {
    throw ShapeError("dense_backward: dimension mismatch");
  }
  DenseGrads<T> g;
  g.dweights = BasicTensor<T>(layer.weights.shape());
  gemm<T>(false, false, layer.in_dim(), layer.out_dim(), 1, features, dlogits, g.dweights.data(),
          false);
  g.dbias.assign(dlogits.begin(), dlogits.end());
  g.dx.assign(layer.in_dim(), T{0});
  gemm<T>(false, false, layer.in_dim(), 1, layer.out_dim(), layer.weights.data(), dlogits,
          std::span<T>(g.dx), false);
  return g;
}

template <typename T>
std::vector<T> dense_sigmoid_head(std::span<const T> features, const BasicDenseLayer<T>& head) {
  auto out = dense_forward(features, head);
  for (auto& v : out) v = sigmoid(v);
  return out;
}

#define SKULLNET_INSTANTIATE_LAYERS(T)                                                           \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicConvLayer<T>&);      \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicConvLayer<T>&,        \
                                        const BasicTensor<T>&, bool);                           \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                 \
  template void leaky_relu_inplace(BasicTensor<T>&, T);                                         \
  template BasicTensor<T> leaky_relu_backward(const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template PoolResult<T> maxpool2_forward(const BasicTensor<T>&);                               \
  template BasicTensor<T> maxpool2_backward(const BasicTensor<T>&,                              \
                                            std::span<const std::uint32_t>, const Shape&);      \
  template std::vector<T> flatten(const BasicTensor<T>&);                                       \
  template BasicTensor<T> unflatten(std::span<const T>, const Shape&);                          \
  template T sigmoid(T);                                                                        \
  template std::vector<T> dense_forward(std::span<const T>, const BasicDenseLayer<T>&);         \
  template DenseGrads<T> dense_backward(std::span<const T>, const BasicDenseLayer<T>&,          \
                                        std::span<const T>);                                    \
  template std::vector<T> dense_sigmoid_head(std::span<const T>, const BasicDenseLayer<T>&);

SKULLNET_INSTANTIATE_LAYERS(float)
SKULLNET_INSTANTIATE_LAYERS(double)

#undef SKULLNET_INSTANTIATE_LAYERS

// --- model -------------------------------------------------------------------

std::vector<std::span<float>> ModelParams::parameter_blocks() {
  std::vector<std::span<float>> blocks;
  for (auto& layer : conv) {
    blocks.emplace_back(layer.kernels.data());
    blocks.emplace_back(layer.bias);
  }
  blocks.emplace_back(head.weights.data());
  blocks.emplace_back(head.bias);
  return blocks;
}

std::vector<std::span<const float>> ModelParams::parameter_blocks() const {
  std::vector<std::span<const float>> blocks;
  for (const auto& layer : conv) {
    blocks.emplace_back(layer.kernels.data());
    blocks.emplace_back(layer.bias);
  }
  blocks.emplace_back(head.weights.data());
  blocks.emplace_back(head.bias);
  return blocks;
}

Shape ModelParams::feature_shape() const {
  std::size_t h = input_shape.at(0), w = input_shape.at(1);
  for (std::size_t i = 1; i < conv.size(); i += 2) {
    h /= 2;
    w /= 2;
  }
  return {h, w, conv.empty() ? input_shape.at(2) : conv.back().out_channels()};
}

std::vector<LayerSummary> summarize(const ModelParams& params) {
  std::vector<LayerSummary> rows;
  rows.push_back({"input", params.input_shape, 0});
  std::size_t h = params.input_shape[0], w = params.input_shape[1];
  for (std::size_t i = 0; i < params.conv.size(); ++i) {
    const auto& layer = params.conv[i];
    rows.push_back({"conv2d_" + std::to_string(i + 1), {h, w, layer.out_channels()},
                    layer.param_count()});
    if (i % 2 == 1) {
      h /= 2;
      w /= 2;
      rows.push_back({"max_pooling2d_" + std::to_string(i / 2 + 1), {h, w, layer.out_channels()},
                      0});
    }
  }
  rows.push_back({"flatten", {shape_numel(params.feature_shape())}, 0});
  return rows;
}

ModelParams build_model(Rng& rng, const Architecture& arch) {
  if (arch.input_shape.size() != 3) throw InvalidArgument("input shape must be (H, W, C)");
  if (arch.conv_channels.empty() || arch.conv_channels.size() % 2 != 0) {
    throw InvalidArgument("convolutions must come in pairs");
  }
  ModelParams p;
  p.input_shape = arch.input_shape;
  p.leaky_slope = arch.leaky_slope;
  std::size_t cin = arch.input_shape[2];
  for (auto cout : arch.conv_channels) {
    ConvLayer layer;
    const std::size_t fan_in = 9 * cin;
    layer.kernels = Tensor({3, 3, cin, cout}, he_normal(rng, fan_in, fan_in * cout));
    layer.bias.assign(cout, 0.0f);
    p.conv.push_back(std::move(layer));
    cin = cout;
  }
  const std::size_t feature_dim = shape_numel(p.feature_shape());
  if (p.feature_shape()[0] == 0 || p.feature_shape()[1] == 0) {
    throw InvalidArgument("input " + shape_to_string(arch.input_shape) +
                          " is too small for the pooling stages");
  }
  p.head.weights = Tensor({feature_dim, arch.num_labels},
                          he_normal(rng, feature_dim, feature_dim * arch.num_labels));
  p.head.bias.assign(arch.num_labels, 0.0f);
  return p;
}

ModelParams build_extractor(Rng& rng, float leaky_slope) {
  Architecture arch;
  arch.leaky_slope = leaky_slope;
  return build_model(rng, arch);
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto block : z.parameter_blocks()) std::fill(block.begin(), block.end(), 0.0f);
  return z;
}

std::size_t count_params(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& layer : params.conv) n += layer.param_count();
  return n;
}

std::size_t head_param_count(const ModelParams& params) { return params.head.param_count(); }

namespace {

void check_input(const ModelParams& params, const Tensor& image) {
  if (image.shape() != params.input_shape) {
    throw ShapeError("model expects input " + shape_to_string(params.input_shape) + ", got " +
                     shape_to_string(image.shape()));
  }
}

}  // namespace

std::vector<float> extract_features(const ModelParams& params, const Tensor& image) {
  check_input(params, image);
  Tensor x = image;
  for (std::size_t i = 0; i < params.conv.size(); ++i) {
    x = conv2d_forward(x, params.conv[i]);
    leaky_relu_inplace(x, params.leaky_slope);
    if (i % 2 == 1) x = maxpool2_forward(x).output;
  }
  return flatten(x);
}

ForwardCache forward_train(const ModelParams& params, const Tensor& image) {
  check_input(params, image);
  ForwardCache cache;
  Tensor x = image;
  for (std::size_t i = 0; i < params.conv.size(); ++i) {
    Tensor pre = conv2d_forward(x, params.conv[i]);
    cache.conv_inputs.push_back(std::move(x));
    x = leaky_relu(pre, params.leaky_slope);
    cache.pre_activations.push_back(std::move(pre));
    if (i % 2 == 1) {
      cache.pool_input_shapes.push_back(x.shape());
      auto pooled = maxpool2_forward(x);
      cache.pool_argmax.push_back(std::move(pooled.argmax));
      x = std::move(pooled.output);
    }
  }
  cache.features = flatten(x);
  cache.logits = dense_forward<float>(cache.features, params.head);
  cache.probabilities = cache.logits;
  for (auto& v : cache.probabilities) v = sigmoid(v);
  return cache;
}

ModelParams backward(const ModelParams& params, const ForwardCache& cache,
                     std::span<const float> dlogits) {
  ModelParams grads;
  grads.input_shape = params.input_shape;
  grads.leaky_slope = params.leaky_slope;
  grads.conv.resize(params.conv.size());

  auto head = dense_backward<float>(cache.features, params.head, dlogits);
  grads.head.weights = std::move(head.dweights);
  grads.head.bias = std::move(head.dbias);

  Tensor d = unflatten<float>(head.dx, params.feature_shape());
  for (std::size_t i = params.conv.size(); i-- > 0;) {
    if (i % 2 == 1) {
      const std::size_t pool = i / 2;
      d = maxpool2_backward(d, cache.pool_argmax[pool], cache.pool_input_shapes[pool]);
    }
    d = leaky_relu_backward(cache.pre_activations[i], d, params.leaky_slope);
    auto g = conv2d_backward(cache.conv_inputs[i], params.conv[i], d, i > 0);
    grads.conv[i].kernels = std::move(g.dkernels);
    grads.conv[i].bias = std::move(g.dbias);
    d = std::move(g.dx);
  }
  return grads;
}

}  // namespace skullnet
