// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors, the seeded random generator and the numeric
// kernels (GEMM, im2col) the network layers are built from.
//
// Layout convention: images and activations are channels-last (H, W, C).
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace skullnet {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;

  /// Throws ShapeError when `shape` is empty or has a zero dimension.
  explicit BasicTensor(Shape shape, T fill = T{0});

  /// Takes ownership of `data`; its length must equal the shape product.
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// (i, j, c) accessor for rank-3 tensors.
  T& at(std::size_t i, std::size_t j, std::size_t c) {
    return data_[(i * shape_[1] + j) * shape_[2] + c];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t c) const {
    return data_[(i * shape_[1] + j) * shape_[2] + c];
  }

  /// Same data under a new shape with equal element count.
  BasicTensor reshaped(Shape shape) const;

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.shape(), std::move(out));
}

/// Deterministic generator: 64-bit Mersenne Twister (std::mt19937_64, whose
/// output sequence is fixed by the C++ standard). Uniform and normal variates
/// are derived here rather than through <random> distributions, which are
/// implementation-defined, so sequences agree across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via the Box-Muller transform (caches the second variate).
  double normal();
  /// Independent generator for sub-stream `stream`, derived from the seed
  /// only (not the current position) via a SplitMix64 mix.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates shuffle driven by Rng::below.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// C = op(A) * op(B), or C += op(A) * op(B) when `accumulate` is set.
/// op(A) is m x k, op(B) is k x n, all matrices row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

/// Matrix product of two rank-2 tensors.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// 3x3, stride 1, same-padded patch matrix of an (H, W, C) tensor.
/// Row r = y * W + x holds the zero-padded receptive field of output pixel
/// (y, x); column (ky * 3 + kx) * C + c holds input (y + ky - 1, x + kx - 1, c).
template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& x);

/// Adjoint of im2col: scatters-adds patch rows back into an (H, W, C) tensor.
template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, std::size_t height, std::size_t width,
                      std::size_t channels);

/// `count` draws from N(0, 2 / fan_in).
std::vector<float> he_normal(Rng& rng, std::size_t fan_in, std::size_t count);

}  // namespace skullnet
