// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "skullnet/error.hpp"
#include "skullnet/nn.hpp"
#include "skullnet/train.hpp"

using namespace skullnet;

namespace {

template <typename T>
BasicTensor<T> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(scale * rng.normal());
  return t;
}

std::vector<double> as_double(std::span<const double> s) { return {s.begin(), s.end()}; }

/// A tiny model with the same topology (conv pairs + pools + sigmoid head).
ModelParams toy_model(std::uint64_t seed) {
  Rng rng(seed);
  Architecture arch;
  arch.input_shape = {8, 8, 2};
  arch.conv_channels = {3, 3, 4, 4};
  arch.num_labels = 3;
  auto m = build_model(rng, arch);
  for (auto& layer : m.conv)
    for (auto& b : layer.bias) b = static_cast<float>(rng.uniform(-0.1, 0.1));
  return m;
}

}  // namespace

// --- convolution -------------------------------------------------------------

TEST(Conv2d, FirstLayerShape) {
  Rng rng(1);
  const auto model = build_extractor(rng);
  Tensor x({200, 200, 3}, 0.5f);
  EXPECT_EQ(conv2d_forward(x, model.conv[0]).shape(), (Shape{200, 200, 32}));
}

TEST(Conv2d, OnesKernelCentreAndCorners) {
  ConvLayer layer{Tensor({3, 3, 1, 1}, 1.0f), {0.0f}};
  const auto y = conv2d_forward(Tensor({3, 3, 1}, 1.0f), layer);
  EXPECT_EQ(y.at(1, 1, 0), 9.0f);
  EXPECT_EQ(y.at(0, 0, 0), 4.0f);
  EXPECT_EQ(y.at(2, 2, 0), 4.0f);
  EXPECT_EQ(y.at(0, 1, 0), 6.0f);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  Rng rng(2);
  ConvLayer layer{Tensor({3, 3, 2, 3}, 0.0f), {0.5f, -1.0f, 2.0f}};
  const auto y = conv2d_forward(random_tensor<float>(rng, {4, 5, 2}), layer);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(i, j, c), layer.bias[c]);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    BasicConvLayer<double> layer{random_tensor<double>(rng, {3, 3, 3, 4}),
                                 {0.1, -0.2, 0.3, 0.0}};
    const auto x = random_tensor<double>(rng, {6, 7, 3});
    const auto y = conv2d_forward(x, layer);
    const auto ref = oracle::conv3x3(as_double(x.data()), 6, 7, 3, as_double(layer.kernels.data()),
                                     layer.bias, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ChannelMismatch) {
  ConvLayer layer{Tensor({3, 3, 2, 1}, 1.0f), {0.0f}};
  EXPECT_THROW(conv2d_forward(Tensor({4, 4, 3}), layer), ShapeError);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(4);
  ConvLayer layer{random_tensor<float>(rng, {3, 3, 2, 2}), {0.1f, 0.2f}};
  const auto x = random_tensor<float>(rng, {5, 5, 2});
  const auto g = conv2d_backward(x, layer, Tensor({5, 5, 2}, 0.0f));
  for (float v : g.dx.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.dkernels.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.dbias) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2dBackward, BiasGradientSumsUpstream) {
  Rng rng(5);
  ConvLayer layer{random_tensor<float>(rng, {3, 3, 1, 2}), {0.0f, 0.0f}};
  const auto g = conv2d_backward(random_tensor<float>(rng, {4, 4, 1}), layer, Tensor({4, 4, 2}, 1.0f));
  EXPECT_EQ(g.dbias, (std::vector<float>{16.0f, 16.0f}));
}

TEST(Conv2dBackward, ShapeMismatch) {
  ConvLayer layer{Tensor({3, 3, 1, 2}, 1.0f), {0.0f, 0.0f}};
  EXPECT_THROW(conv2d_backward(Tensor({4, 4, 1}), layer, Tensor({4, 4, 3})), ShapeError);
}

TEST(Conv2dBackward, FiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) EXPECT_LT(grad_check(LayerKind::kConv, rng), 1e-4);
}

// --- leaky relu --------------------------------------------------------------

TEST(LeakyRelu, Values) {
  Tensor x({4}, std::vector<float>{2.0f, -1.0f, 0.0f, -3.0f});
  const auto y = leaky_relu(x, 0.01f);
  EXPECT_EQ(y.data()[0], 2.0f);
  EXPECT_FLOAT_EQ(y.data()[1], -0.01f);
  EXPECT_EQ(y.data()[2], 0.0f);
  EXPECT_FLOAT_EQ(y.data()[3], -0.03f);
  EXPECT_EQ(leaky_relu(x, 0.0f).data()[1], 0.0f);
}

TEST(LeakyRelu, InPlaceMatchesCopy) {
  Rng rng(7);
  auto x = random_tensor<float>(rng, {3, 4, 5});
  const auto y = leaky_relu(x, 0.01f);
  leaky_relu_inplace(x, 0.01f);
  EXPECT_EQ(x, y);
}

TEST(LeakyRelu, BackwardScalesUpstream) {
  Tensor x({3}, std::vector<float>{1.0f, -1.0f, 0.0f});
  Tensor dy({3}, std::vector<float>{2.0f, 2.0f, 2.0f});
  const auto dx = leaky_relu_backward(x, dy, 0.01f);
  EXPECT_EQ(dx.data()[0], 2.0f);
  EXPECT_FLOAT_EQ(dx.data()[1], 0.02f);
  EXPECT_EQ(dx.data()[2], 2.0f);
}

TEST(LeakyRelu, FiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) EXPECT_LT(grad_check(LayerKind::kLeakyRelu, rng), 1e-5);
}

// --- max pooling -------------------------------------------------------------

TEST(MaxPool, TableShapes) {
  EXPECT_EQ(maxpool2_forward(Tensor({200, 200, 32})).output.shape(), (Shape{100, 100, 32}));
  EXPECT_EQ(maxpool2_forward(Tensor({25, 25, 256})).output.shape(), (Shape{12, 12, 256}));
}

TEST(MaxPool, ConstantInput) {
  const auto r = maxpool2_forward(Tensor({5, 4, 2}, 3.5f));
  for (float v : r.output.data()) EXPECT_EQ(v, 3.5f);
}

TEST(MaxPool, TiesGoToSmallestIndex) {
  const auto r = maxpool2_forward(Tensor({2, 2, 1}, 1.0f));
  ASSERT_EQ(r.argmax.size(), 1u);
  EXPECT_EQ(r.argmax[0], 0u);
}

TEST(MaxPool, ArgmaxStaysInsideWindow) {
  Rng rng(9);
  const auto x = random_tensor<float>(rng, {7, 9, 3});
  const auto r = maxpool2_forward(x);
  const auto& s = r.output.shape();
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t j = 0; j < s[1]; ++j)
      for (std::size_t c = 0; c < s[2]; ++c) {
        const auto idx = r.argmax[(i * s[1] + j) * s[2] + c];
        const std::size_t yi = idx / (9 * 3), xj = (idx / 3) % 9, ch = idx % 3;
        EXPECT_EQ(ch, c);
        EXPECT_TRUE(yi / 2 == i && xj / 2 == j);
        EXPECT_EQ(x.data()[idx], r.output.at(i, j, c));
      }
}

TEST(MaxPool, MatchesOracle) {
  Rng rng(10);
  const auto x = random_tensor<double>(rng, {9, 6, 2});
  const auto r = maxpool2_forward(x);
  const auto ref = oracle::maxpool(as_double(x.data()), 9, 6, 2);
  EXPECT_EQ(as_double(r.output.data()), ref);
}

TEST(MaxPool, TooSmall) {
  EXPECT_THROW(maxpool2_forward(Tensor({1, 5, 1})), ShapeError);
}

TEST(MaxPoolBackward, RoutesToArgmax) {
  Rng rng(11);
  const auto x = random_tensor<float>(rng, {4, 4, 1});
  const auto r = maxpool2_forward(x);
  const auto dx = maxpool2_backward(Tensor({2, 2, 1}, 1.0f), r.argmax, x.shape());
  int ones = 0;
  for (float v : dx.data()) ones += v == 1.0f;
  EXPECT_EQ(ones, 4);

  const auto zero = maxpool2_backward(Tensor({2, 2, 1}, 0.0f), r.argmax, x.shape());
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
}

TEST(MaxPoolBackward, DroppedRowGetsZero) {
  Rng rng(12);
  const auto x = random_tensor<float>(rng, {5, 5, 1});
  const auto r = maxpool2_forward(x);
  const auto dx = maxpool2_backward(Tensor({2, 2, 1}, 1.0f), r.argmax, x.shape());
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(dx.at(4, k, 0), 0.0f);
    EXPECT_EQ(dx.at(k, 4, 0), 0.0f);
  }
}

TEST(MaxPoolBackward, FiniteDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) EXPECT_LT(grad_check(LayerKind::kMaxPool, rng), 1e-4);
}

// --- flatten / dense ---------------------------------------------------------

TEST(Flatten, LayoutAndRoundTrip) {
  Rng rng(14);
  const auto x = random_tensor<float>(rng, {12, 12, 256});
  const auto f = flatten(x);
  ASSERT_EQ(f.size(), 36864u);
  EXPECT_EQ(f[(3 * 12 + 7) * 256 + 100], x.at(3, 7, 100));
  EXPECT_EQ(unflatten<float>(f, x.shape()), x);
  EXPECT_THROW(unflatten<float>(f, {12, 12, 255}), ShapeError);
}

TEST(DenseHead, ZeroWeights) {
  DenseLayer head{Tensor({10, 7}, 0.0f), std::vector<float>(7, 0.0f)};
  const std::vector<float> f(10, 1.0f);
  for (float p : dense_sigmoid_head<float>(f, head)) EXPECT_EQ(p, 0.5f);
  head.bias[2] = std::log(3.0f);
  EXPECT_NEAR(dense_sigmoid_head<float>(f, head)[2], 0.75f, 1e-7);
}

TEST(DenseHead, MatchesScalarLoop) {
  Rng rng(15);
  BasicDenseLayer<double> head{random_tensor<double>(rng, {20, 7}, 0.3), std::vector<double>(7)};
  for (auto& b : head.bias) b = rng.normal();
  std::vector<double> f(20);
  for (auto& v : f) v = rng.normal();
  const auto p = dense_sigmoid_head<double>(f, head);
  for (std::size_t o = 0; o < 7; ++o) {
    double z = head.bias[o];
    for (std::size_t i = 0; i < 20; ++i) z += head.weights.data()[i * 7 + o] * f[i];
    EXPECT_NEAR(p[o], oracle::sigmoid(z), 1e-12);
    EXPECT_GT(p[o], 0.0);
    EXPECT_LT(p[o], 1.0);
  }
}

TEST(DenseHead, LengthMismatch) {
  DenseLayer head{Tensor({10, 7}, 0.0f), std::vector<float>(7, 0.0f)};
  const std::vector<float> f(9, 1.0f);
  EXPECT_THROW(dense_sigmoid_head<float>(f, head), ShapeError);
}

TEST(DenseHead, SigmoidIsStableAtExtremes) {
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_FALSE(std::isnan(sigmoid(-1000.0f)));
}

TEST(DenseBackward, FiniteDifferences) {
  Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) EXPECT_LT(grad_check(LayerKind::kDense, rng), 1e-5);
}

// --- model -------------------------------------------------------------------

TEST(Extractor, ParameterCounts) {
  Rng rng(17);
  const auto m = build_extractor(rng);
  const std::vector<std::size_t> expected{896, 9248, 18496, 36928, 73856, 147584, 295168, 590080};
  ASSERT_EQ(m.conv.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(m.conv[i].param_count(), expected[i]);
  EXPECT_EQ(count_params(m), 1172256u);
  EXPECT_EQ(m.head.in_dim(), kFeatureDim);
  EXPECT_EQ(m.head.out_dim(), 7u);
  EXPECT_EQ(head_param_count(m), 36864u * 7u + 7u);
}

TEST(Extractor, SummaryShapes) {
  Rng rng(18);
  const auto rows = summarize(build_extractor(rng));
  const std::vector<Shape> expected{{200, 200, 3},  {200, 200, 32}, {200, 200, 32}, {100, 100, 32},
                                    {100, 100, 64}, {100, 100, 64}, {50, 50, 64},   {50, 50, 128},
                                    {50, 50, 128},  {25, 25, 128},  {25, 25, 256},  {25, 25, 256},
                                    {12, 12, 256},  {36864}};
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].activation_shape, expected[i]) << rows[i].name;
  EXPECT_EQ(rows[1].name, "conv2d_1");
  EXPECT_EQ(rows[3].name, "max_pooling2d_1");
  EXPECT_EQ(rows.back().name, "flatten");
}

TEST(Extractor, DeterministicAndHeInitialized) {
  Rng a(19), b(19), c(20);
  const auto ma = build_extractor(a);
  EXPECT_EQ(ma, build_extractor(b));
  EXPECT_NE(ma, build_extractor(c));
  for (const auto& layer : ma.conv)
    for (float v : layer.bias) EXPECT_EQ(v, 0.0f);
  // Empirical std of the 590080-parameter layer against sqrt(2 / fan_in).
  const auto& k = ma.conv[7].kernels;
  double ss = 0;
  for (float v : k.data()) ss += static_cast<double>(v) * v;
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(k.size())) / std::sqrt(2.0 / (9 * 256)), 1.0, 0.01);
}

TEST(Extractor, ZeroImageGivesZeroFeatures) {
  Rng rng(21);
  const auto m = build_extractor(rng);
  const auto f = extract_features(m, Tensor({200, 200, 3}, 0.0f));
  ASSERT_EQ(f.size(), 36864u);
  for (float v : f) ASSERT_EQ(v, 0.0f);
}

TEST(Extractor, WrongInputShape) {
  Rng rng(22);
  const auto m = build_extractor(rng);
  EXPECT_THROW(extract_features(m, Tensor({100, 100, 3})), ShapeError);
  EXPECT_THROW(extract_features(m, Tensor({200, 200, 1})), ShapeError);
}

TEST(Extractor, EqualsLayerByLayerComposition) {
  const auto m = toy_model(23);
  Rng rng(24);
  const auto img = random_tensor<float>(rng, {8, 8, 2});
  Tensor x = img;
  for (std::size_t i = 0; i < m.conv.size(); ++i) {
    x = leaky_relu(conv2d_forward(x, m.conv[i]), m.leaky_slope);
    if (i % 2 == 1) x = maxpool2_forward(x).output;
  }
  EXPECT_EQ(extract_features(m, img), flatten(x));
  EXPECT_EQ(forward_train(m, img).features, flatten(x));
}

TEST(Extractor, FullSizeForwardIsDeterministic) {
  Rng rng(25);
  const auto m = build_extractor(rng);
  const auto img = random_tensor<float>(rng, {200, 200, 3}, 0.3);
  EXPECT_EQ(extract_features(m, img), extract_features(m, img));
}

TEST(Backward, HeadGradientMatchesFiniteDifferences) {
  // Loss = mean BCE over labels of sigma(W^T f + b) where f comes from the
  // forward pass; the numeric side perturbs W in double precision.
  const auto m = toy_model(26);
  Rng rng(27);
  const auto img = random_tensor<float>(rng, {8, 8, 2});
  const std::vector<std::uint8_t> y{1, 0, 1};
  const auto cache = forward_train(m, img);
  std::vector<float> dlogits(3);
  for (std::size_t l = 0; l < 3; ++l) dlogits[l] = (cache.probabilities[l] - y[l]) / 3.0f;
  const auto grads = backward(m, cache, dlogits);

  std::vector<double> w(m.head.weights.data().begin(), m.head.weights.data().end());
  const std::vector<double> f(cache.features.begin(), cache.features.end());
  auto loss = [&]() {
    std::vector<double> p(3);
    for (std::size_t o = 0; o < 3; ++o) {
      double z = m.head.bias[o];
      for (std::size_t i = 0; i < f.size(); ++i) z += w[i * 3 + o] * f[i];
      p[o] = oracle::sigmoid(z);
    }
    return oracle::bce(p, y);
  };
  const double eps = 1e-3;
  double worst = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w[i];
    w[i] = saved + eps;
    const double up = loss();
    w[i] = saved - eps;
    const double down = loss();
    w[i] = saved;
    const double num = (up - down) / (2 * eps);
    const double ana = grads.head.weights.data()[i];
    const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
    worst = std::max(worst, std::abs(num - ana) / denom);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, ConvGradientsMatchFiniteDifferences) {
  // Float model, so the numeric side is coarser; checks the whole chain.
  auto m = toy_model(28);
  Rng rng(29);
  const auto img = random_tensor<float>(rng, {8, 8, 2});
  const std::vector<std::uint8_t> y{0, 1, 1};
  auto loss = [&]() {
    const auto c = forward_train(m, img);
    std::vector<double> p(c.probabilities.begin(), c.probabilities.end());
    return oracle::bce(p, y);
  };
  const auto cache = forward_train(m, img);
  std::vector<float> dlogits(3);
  for (std::size_t l = 0; l < 3; ++l) dlogits[l] = (cache.probabilities[l] - y[l]) / 3.0f;
  const auto grads = backward(m, cache, dlogits);

  // Central differences in float across a leaky-ReLU or max-pool kink are
  // not derivatives; a parameter is only compared when two step sizes agree.
  auto central = [&](float& w, float eps) {
    const float saved = w;
    w = saved + eps;
    const double up = loss();
    w = saved - eps;
    const double down = loss();
    w = saved;
    return (up - down) / (2.0 * static_cast<double>(eps));
  };
  std::size_t checked = 0, sampled = 0;
  for (std::size_t layer = 0; layer < m.conv.size(); ++layer) {
    auto k = m.conv[layer].kernels.data();
    const auto g = grads.conv[layer].kernels.data();
    for (std::size_t i = 0; i < k.size(); i += 5) {
      ++sampled;
      const double a = central(k[i], 1e-3f), b = central(k[i], 5e-4f);
      const double tol = 1e-3 + 0.02 * std::abs(a);
      if (std::abs(a - b) > tol) continue;
      ++checked;
      EXPECT_NEAR(g[i], a, tol) << "layer " << layer << " index " << i;
    }
  }
  EXPECT_GE(checked * 4, sampled * 3) << checked << " of " << sampled << " parameters were smooth enough to check";
}
