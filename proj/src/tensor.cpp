// SPDX-License-Identifier: Apache-2.0
#include "skullnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "skullnet/error.hpp"

namespace skullnet {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("invalid tensor shape " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  return BasicTensor(std::move(shape), data_);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// --- Rng ---------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw InvalidArgument("Rng::below requires a positive bound");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % bound;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
}

// --- kernels -----------------------------------------------------------------

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  if (a.size() < m * k || b.size() < k * n || c.size() < m * n) {
    throw ShapeError("gemm: buffer too small for requested dimensions");
  }
  const auto rows_a = static_cast<Eigen::Index>(trans_a ? k : m);
  const auto cols_a = static_cast<Eigen::Index>(trans_a ? m : k);
  const auto rows_b = static_cast<Eigen::Index>(trans_b ? n : k);
  const auto cols_b = static_cast<Eigen::Index>(trans_b ? k : n);
  ConstMap ma(a.data(), rows_a, cols_a);
  ConstMap mb(b.data(), rows_b, cols_b);
  Eigen::Map<RowMat> mc(c.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));

  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      mc.noalias() += lhs * rhs;
    } else {
      mc.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) {
    run(ma.transpose(), mb.transpose());
  } else if (trans_a) {
    run(ma.transpose(), mb);
  } else if (trans_b) {
    run(ma, mb.transpose());
  } else {
    run(ma, mb);
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t,
                          std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t,
                           std::span<const double>, std::span<const double>, std::span<double>,
                           bool);

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> c({m, n});
  gemm<T>(false, false, m, n, k, a.data(), b.data(), c.data(), false);
  return c;
}

template BasicTensor<float> matmul(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> matmul(const BasicTensor<double>&, const BasicTensor<double>&);

template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("im2col expects an (H, W, C) tensor");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  const std::size_t row_len = 9 * ch;
  BasicTensor<T> cols({h * w, row_len});
  const T* src = x.data().data();
  T* dst = cols.data().data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      T* row = dst + (y * w + xx) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(xx) + kx - 1;
          T* cell = row + static_cast<std::size_t>(ky * 3 + kx) * ch;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) {
            std::fill(cell, cell + ch, T{0});
          } else {
            std::memcpy(cell, src + (static_cast<std::size_t>(sy) * w + sx) * ch, ch * sizeof(T));
          }
        }
      }
    }
  }
  return cols;
}

template BasicTensor<float> im2col(const BasicTensor<float>&);
template BasicTensor<double> im2col(const BasicTensor<double>&);

template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, std::size_t h, std::size_t w, std::size_t ch) {
  if (cols.rank() != 2 || cols.dim(0) != h * w || cols.dim(1) != 9 * ch) {
    throw ShapeError("col2im: patch matrix " + shape_to_string(cols.shape()) +
                     " does not match image " + shape_to_string({h, w, ch}));
  }
  BasicTensor<T> x({h, w, ch});
  const T* src = cols.data().data();
  T* dst = x.data().data();
  const std::size_t row_len = 9 * ch;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const T* row = src + (y * w + xx) * row_len;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        if (sy < 0 || sy >= static_cast<long>(h)) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(xx) + kx - 1;
          if (sx < 0 || sx >= static_cast<long>(w)) continue;
          const T* cell = row + static_cast<std::size_t>(ky * 3 + kx) * ch;
          T* out = dst + (static_cast<std::size_t>(sy) * w + sx) * ch;
          for (std::size_t c = 0; c < ch; ++c) out[c] += cell[c];
        }
      }
    }
  }
  return x;
}

template BasicTensor<float> col2im(const BasicTensor<float>&, std::size_t, std::size_t,
                                   std::size_t);
template BasicTensor<double> col2im(const BasicTensor<double>&, std::size_t, std::size_t,
                                    std::size_t);

std::vector<float> he_normal(Rng& rng, std::size_t fan_in, std::size_t count) {
  if (fan_in == 0) throw InvalidArgument("he_normal: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<float> out(count);
  for (auto& v : out) v = static_cast<float>(rng.normal() * stddev);
  return out;
}

}  // namespace skullnet
