// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qcg/error.hpp"
#include "qcg/numerics.hpp"

namespace qcg {

enum class Granularity { per_tensor, per_column };

inline std::string to_string(Granularity g) {
  return g == Granularity::per_tensor ? "per-tensor" : "per-column";
}

inline Granularity parse_granularity(const std::string& s) {
  if (s == "per-tensor") return Granularity::per_tensor;
  if (s == "per-column") return Granularity::per_column;
  throw Error(ErrorKind::parameter, "unknown granularity '" + s + "'");
}

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;

/// Largest representable magnitude for a symmetric B-bit grid: 2^(B-1) - 1.
inline std::int32_t qmax_for(int bits) {
  require(bits >= kMinBits && bits <= kMaxBits, ErrorKind::parameter,
          "bitwidth " + std::to_string(bits) + " outside [2, 16]");
  return (std::int32_t{1} << (bits - 1)) - 1;
}

/// Round half to even, independent of the floating-point environment.
inline double round_half_even(double x) {
  const double r = std::round(x);  // half away from zero
  if (std::fabs(x - std::trunc(x)) == 0.5) return 2.0 * std::round(x / 2.0);
  return r;
}

/// Quantizer configuration for one tensor. One group for per-tensor,
/// one group per output column (last dimension) for per-column.
struct QuantParams {
  std::vector<float> alpha;
  std::vector<float> scale;
  int bitwidth = 8;
  Granularity granularity = Granularity::per_tensor;

  std::size_t groups() const noexcept { return scale.size(); }
  std::int32_t qmax() const { return qmax_for(bitwidth); }
  float step(std::size_t g) const { return 1.0f / scale[g]; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Integer payload plus the parameters needed to map it back to floats.
/// Bitwidths up to 8 store int8; wider grids store int32.
class QuantizedTensor {
 public:
  QuantizedTensor() = default;
  QuantizedTensor(Tensor q, QuantParams params) : q_(std::move(q)), params_(std::move(params)) {
    const auto qm = params_.qmax();
    require(q_.dtype() != DType::f32, ErrorKind::inconsistency, "quantized payload must be integer");
    require(!params_.scale.empty() && params_.alpha.size() == params_.scale.size(), ErrorKind::inconsistency,
            "quantization parameters need one alpha and scale per group");
    if (params_.granularity == Granularity::per_column) {
      require(q_.rank() == 2 && params_.groups() == q_.cols(), ErrorKind::inconsistency,
              "per-column tensors carry exactly one scale per output column");
    } else {
      require(params_.groups() == 1, ErrorKind::inconsistency, "per-tensor tensors carry exactly one scale");
    }
    auto check = [&](auto span) {
      for (auto v : span)
        require(v >= -qm && v <= qm, ErrorKind::inconsistency, "quantized value outside the symmetric range");
    };
    if (q_.dtype() == DType::i8) check(q_.i8()); else check(q_.i32());
  }

  const Tensor& q() const noexcept { return q_; }
  const QuantParams& params() const noexcept { return params_; }
  const Shape& shape() const noexcept { return q_.shape(); }

  /// Group of flat element index i.
  std::size_t group_of(std::size_t i) const {
    return params_.granularity == Granularity::per_tensor ? 0 : i % params_.groups();
  }

  std::int32_t at(std::size_t i) const {
    return q_.dtype() == DType::i8 ? q_.i8()[i] : q_.i32()[i];
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;

 private:
  Tensor q_;
  QuantParams params_;
};

/// Per-group clip range: clip_ratio times the group's max |x|.
inline std::vector<float> compute_range(const Tensor& t, Granularity granularity, float clip_ratio = 1.0f) {
  require(!t.empty(), ErrorKind::empty_input, "cannot compute the range of an empty tensor");
  require(clip_ratio > 0.0f && clip_ratio <= 1.0f, ErrorKind::parameter, "clip ratio must lie in (0, 1]");
  const auto v = t.f32();
  if (granularity == Granularity::per_tensor) return {clip_ratio * max_abs(v)};
  require(t.rank() == 2, ErrorKind::dimension, "per-column granularity needs a 2-D tensor");
  const std::size_t rows = t.rows(), cols = t.cols();
  std::vector<float> alpha(cols, 0.0f);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) alpha[c] = std::max(alpha[c], std::fabs(v[r * cols + c]));
  for (auto& a : alpha) a *= clip_ratio;
  return alpha;
}

namespace detail {

template <typename T>
Tensor quantize_payload(std::span<const float> v, const Shape& shape, const QuantParams& p) {
  const auto qm = static_cast<float>(p.qmax());
  const std::size_t groups = p.groups();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t g = p.granularity == Granularity::per_tensor ? 0 : i % groups;
    if (p.alpha[g] == 0.0f) {
      out[i] = 0;
      continue;
    }
    const float a = p.alpha[g];
    const float clipped = std::clamp(v[i], -a, a);
    const float r = static_cast<float>(round_half_even(static_cast<double>(clipped) * p.scale[g]));
    out[i] = static_cast<T>(std::clamp(r, -qm, qm));
  }
  return Tensor(shape, std::move(out));
}

}  // namespace detail

/// Quantizes with caller-supplied clip ranges (one per group). Used directly
/// by static activation quantization, where alpha comes from calibration.
inline QuantizedTensor quantize_with_range(const Tensor& t, Granularity granularity, int bitwidth,
                                           std::vector<float> alpha) {
  const auto qm = qmax_for(bitwidth);
  require(!t.empty(), ErrorKind::empty_input, "cannot quantize an empty tensor");
  const std::size_t groups = granularity == Granularity::per_tensor ? 1 : t.cols();
  require(alpha.size() == groups, ErrorKind::inconsistency, "one clip range per group is required");
  QuantParams p;
  p.bitwidth = bitwidth;
  p.granularity = granularity;
  p.scale.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    require(std::isfinite(alpha[g]) && alpha[g] >= 0.0f, ErrorKind::parameter, "clip range must be finite and >= 0");
    p.scale[g] = alpha[g] == 0.0f ? 1.0f : static_cast<float>(qm) / alpha[g];
  }
  p.alpha = std::move(alpha);
  Tensor q = bitwidth <= 8 ? detail::quantize_payload<std::int8_t>(t.f32(), t.shape(), p)
                           : detail::quantize_payload<std::int32_t>(t.f32(), t.shape(), p);
  return QuantizedTensor(std::move(q), std::move(p));
}

/// Symmetric quantizer: clip to [-alpha, alpha], scale by qmax/alpha, round
/// half to even, clamp to [-qmax, qmax].
inline QuantizedTensor quantize(const Tensor& t, Granularity granularity, int bitwidth, float clip_ratio = 1.0f) {
  qmax_for(bitwidth);
  return quantize_with_range(t, granularity, bitwidth, compute_range(t, granularity, clip_ratio));
}

inline Tensor dequantize(const QuantizedTensor& qt) {
  const auto& p = qt.params();
  const std::size_t n = qt.q().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = qt.group_of(i);
    out[i] = static_cast<float>(qt.at(i)) / p.scale[g];
  }
  return Tensor(qt.shape(), std::move(out));
}

struct NoiseReport {
  double q_a = 0.0;  ///< ||x - Q(x)||_2 / ||x||_2
  double mse = 0.0;
  std::vector<float> step;  ///< quantization step per group
  /// Uniform-noise estimate sqrt(mean(step^2 / 12)) / rms(x); metadata only.
  double approx_q_a = 0.0;
};

inline NoiseReport quant_noise(const Tensor& orig, const QuantizedTensor& qt) {
  require(orig.shape() == qt.shape(), ErrorKind::dimension, "noise needs matching shapes");
  const auto x = orig.f32();
  const auto& p = qt.params();
  double err = 0.0, norm = 0.0, step_sq = 0.0;
  bool any_nonzero_q = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto g = qt.group_of(i);
    const auto qi = qt.at(i);
    any_nonzero_q |= qi != 0;
    const double d = static_cast<double>(static_cast<float>(qi) / p.scale[g]) - x[i];
    err += d * d;
    norm += static_cast<double>(x[i]) * x[i];
    const double s = 1.0 / p.scale[g];
    step_sq += s * s / 12.0;
  }
  NoiseReport r;
  r.mse = err / static_cast<double>(x.size());
  for (std::size_t g = 0; g < p.groups(); ++g) r.step.push_back(p.step(g));
  if (norm == 0.0) {
    require(!any_nonzero_q, ErrorKind::inconsistency, "zero-norm tensor paired with a nonzero quantized tensor");
    return r;
  }
  r.q_a = std::sqrt(err / norm);
  r.approx_q_a = std::sqrt(step_sq / norm);
  return r;
}

namespace detail {

template <typename Acc, typename TA, typename TW>
void int_gemm(std::span<const TA> a, std::span<const TW> w, std::size_t m, std::size_t k, std::size_t n,
              std::vector<Acc>& acc) {
  acc.assign(m * n, Acc{0});
  for (std::size_t i = 0; i < m; ++i) {
    Acc* row = acc.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Acc x = a[i * k + p];
      if (x == 0) continue;
      const TW* wrow = w.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += x * static_cast<Acc>(wrow[j]);
    }
  }
}

}  // namespace detail

/// Whether K-term dot products of the given grids can overflow Acc.
template <typename Acc>
bool accumulator_fits(std::size_t k, std::int32_t qmax_a, std::int32_t qmax_w) {
  const long double bound = static_cast<long double>(k) * qmax_a * qmax_w;
  return bound <= static_cast<long double>(std::numeric_limits<Acc>::max());
}

/// Integer matmul: int products accumulated in Acc, then each output column
/// rescaled by 1 / (s_a * s_w[col]) and the bias added in f32.
template <typename Acc = std::int32_t>
Tensor int_matmul(const QuantizedTensor& aq, const QuantizedTensor& wq, const Tensor* bias = nullptr) {
  require(aq.params().granularity == Granularity::per_tensor, ErrorKind::parameter,
          "activations must be quantized per-tensor");
  const std::size_t m = aq.q().rows(), k = aq.q().cols(), n = wq.q().cols();
  require(wq.q().rows() == k, ErrorKind::dimension,
          "int_matmul inner dimensions differ: " + shape_string(aq.shape()) + " x " + shape_string(wq.shape()));
  require(accumulator_fits<Acc>(k, aq.params().qmax(), wq.params().qmax()), ErrorKind::overflow_risk,
          "K=" + std::to_string(k) + " can overflow the integer accumulator at these bitwidths");
  if (bias) require(bias->size() == n, ErrorKind::dimension, "bias length must equal output columns");

  std::vector<Acc> acc;
  auto run = [&](auto a_span) {
    if (wq.q().dtype() == DType::i8) detail::int_gemm<Acc>(a_span, wq.q().i8(), m, k, n, acc);
    else detail::int_gemm<Acc>(a_span, wq.q().i32(), m, k, n, acc);
  };
  if (aq.q().dtype() == DType::i8) run(aq.q().i8()); else run(aq.q().i32());

  const double sa = aq.params().scale[0];
  std::vector<double> inv(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double sw = wq.params().scale[wq.params().granularity == Granularity::per_tensor ? 0 : j];
    inv[j] = 1.0 / (sa * sw);
  }
  std::vector<float> out(m * n);
  const auto b = bias ? bias->f32() : std::span<const float>{};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      float y = static_cast<float>(static_cast<double>(acc[i * n + j]) * inv[j]);
      if (bias) y += b[j];
      out[i * n + j] = y;
    }
  return Tensor({m, n}, std::move(out));
}

/// int_matmul with the narrowest accumulator that cannot overflow.
inline Tensor int_matmul_auto(const QuantizedTensor& aq, const QuantizedTensor& wq, const Tensor* bias = nullptr) {
  if (accumulator_fits<std::int32_t>(aq.q().cols(), aq.params().qmax(), wq.params().qmax()))
    return int_matmul<std::int32_t>(aq, wq, bias);
  return int_matmul<std::int64_t>(aq, wq, bias);
}

}  // namespace qcg
