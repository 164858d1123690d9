// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "qcg/error.hpp"

namespace qcg {

using Shape = std::vector<std::size_t>;

/// Element kinds a tensor payload may hold. The numeric values are the
/// on-disk dtype tags of the QTZ1 format.
enum class DType : std::uint8_t { f32 = 0, i8 = 1, i32 = 2 };

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::f32;
  } else if constexpr (std::is_same_v<T, std::int8_t>) {
    return DType::i8;
  } else {
    static_assert(std::is_same_v<T, std::int32_t>, "unsupported tensor element type");
    return DType::i32;
  }
}

inline std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::i8: return 1;
    case DType::i32: return 4;
  }
  return 0;
}

/// Dense row-major tensor. Immutable once constructed; copies share nothing.
class Tensor {
 public:
  Tensor() : data_(std::vector<float>{}) {}

  template <typename T>
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    for (auto d : shape_) require(d > 0, ErrorKind::dimension, "tensor dimensions must be positive");
    require(element_count(shape_) == std::get<std::vector<T>>(data_).size(), ErrorKind::dimension,
            "payload length does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) {
    const auto n = element_count(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
  }

  /// Convenience for literals in tests and fixtures: a 2-D f32 tensor.
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::dimension, "ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, data_);
  }
  bool empty() const noexcept { return size() == 0; }
  DType dtype() const noexcept { return static_cast<DType>(data_.index()); }

  std::size_t rows() const {
    require(rank() == 2, ErrorKind::dimension, "expected a 2-D tensor, got " + shape_string(shape_));
    return shape_[0];
  }
  std::size_t cols() const {
    require(rank() == 2, ErrorKind::dimension, "expected a 2-D tensor, got " + shape_string(shape_));
    return shape_[1];
  }

  template <typename T>
  std::span<const T> values() const {
    const auto* v = std::get_if<std::vector<T>>(&data_);
    require(v != nullptr, ErrorKind::inconsistency, "tensor dtype does not match requested element type");
    return {v->data(), v->size()};
  }
  std::span<const float> f32() const { return values<float>(); }
  std::span<const std::int8_t> i8() const { return values<std::int8_t>(); }
  std::span<const std::int32_t> i32() const { return values<std::int32_t>(); }

  /// Raw little-endian payload bytes (host order; the library targets
  /// little-endian hosts only).
  std::span<const std::byte> bytes() const {
    return std::visit(
        [](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); }, data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::int8_t>, std::vector<std::int32_t>> data_;
};

/// SplitMix64 generator. Identical seeds give identical streams on every
/// platform; floating-point draws are built from the integer stream only.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled so there is no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, ErrorKind::parameter, "uniform_int needs a positive bound");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call, no cached spare so
  /// the stream position is easy to reason about).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Independent child stream, e.g. one per layer.
  Rng fork(std::uint64_t stream) const {
    Rng mixer(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
};

inline Tensor random_normal(Shape shape, Rng& rng, float stddev = 1.0f) {
  std::vector<float> v(element_count(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal()) * stddev;
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_uniform(Shape shape, Rng& rng, float lo, float hi) {
  std::vector<float> v(element_count(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

/// Row-major product of an MxK and a KxN f32 matrix with f32 accumulation.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorKind::dimension,
          "matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const auto av = a.f32();
  const auto bv = b.f32();
  std::vector<float> out(m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float x = av[i * k + p];
      if (x == 0.0f) continue;
      const float* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * brow[j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

struct Stats {
  float max_abs = 0.0f;
  float l2_norm = 0.0f;
  float mean = 0.0f;
};

inline Stats stats(std::span<const float> v) {
  require(!v.empty(), ErrorKind::empty_input, "stats of an empty tensor");
  double sum = 0.0, sq = 0.0;
  float max_abs = 0.0f;
  for (float x : v) {
    sum += x;
    sq += static_cast<double>(x) * x;
    max_abs = std::max(max_abs, std::fabs(x));
  }
  return {max_abs, static_cast<float>(std::sqrt(sq)), static_cast<float>(sum / static_cast<double>(v.size()))};
}

inline Stats stats(const Tensor& t) {
  require(!t.empty(), ErrorKind::empty_input, "stats of an empty tensor");
  return stats(t.f32());
}

inline float max_abs(std::span<const float> v) {
  float m = 0.0f;
  for (float x : v) m = std::max(m, std::fabs(x));
  return m;
}

/// Runs body(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to index-addressed slots so output order never depends on timing.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> failures(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

}  // namespace qcg
