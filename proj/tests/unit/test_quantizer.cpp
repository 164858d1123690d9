// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "qcg/analysis.hpp"
#include "qcg/quantizer.hpp"
#include "unit.hpp"

namespace qcg {
namespace {

const Tensor kSample = Tensor::matrix({{1.0f, -2.0f}, {0.5f, 4.0f}});

std::vector<std::int32_t> ints(const QuantizedTensor& qt) {
  std::vector<std::int32_t> v;
  for (std::size_t i = 0; i < qt.q().size(); ++i) v.push_back(qt.at(i));
  return v;
}

// Independent scalar quantizer: nearbyint uses the default round-to-nearest-even mode.
std::int32_t scalar_quantize(double x, double alpha, int bits) {
  const double qmax = std::ldexp(1.0, bits - 1) - 1.0;
  if (alpha == 0.0) return 0;
  const double s = static_cast<double>(static_cast<float>(qmax / alpha));
  const double c = std::clamp(x, -alpha, alpha);
  return static_cast<std::int32_t>(std::clamp(std::nearbyint(c * s), -qmax, qmax));
}

TEST(RoundHalfEven, Ties) {
  EXPECT_EQ(round_half_even(0.5), 0.0);
  EXPECT_EQ(round_half_even(1.5), 2.0);
  EXPECT_EQ(round_half_even(2.5), 2.0);
  EXPECT_EQ(round_half_even(-63.5), -64.0);
  EXPECT_EQ(round_half_even(-62.5), -62.0);
  EXPECT_EQ(round_half_even(2.4999), 2.0);
  EXPECT_EQ(round_half_even(-0.6), -1.0);
}

TEST(Qmax, SupportedBitwidths) {
  EXPECT_EQ(qmax_for(2), 1);
  EXPECT_EQ(qmax_for(8), 127);
  EXPECT_EQ(qmax_for(16), 32767);
  EXPECT_QCG_ERROR(qmax_for(1), ErrorKind::parameter);
  EXPECT_QCG_ERROR(qmax_for(17), ErrorKind::parameter);
}

TEST(ComputeRange, PerTensorAndPerColumn) {
  EXPECT_EQ(compute_range(kSample, Granularity::per_tensor), std::vector<float>{4.0f});
  EXPECT_EQ(compute_range(kSample, Granularity::per_column), (std::vector<float>{1.0f, 4.0f}));
}

TEST(ComputeRange, LinearInRatio) {
  Rng rng(1);
  const Tensor t = random_normal({9, 5}, rng);
  for (auto g : {Granularity::per_tensor, Granularity::per_column}) {
    const auto full = compute_range(t, g, 1.0f), half = compute_range(t, g, 0.5f);
    for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(half[i], full[i] * 0.5f);
  }
}

TEST(ComputeRange, RejectsBadRatios) {
  EXPECT_QCG_ERROR(compute_range(kSample, Granularity::per_tensor, 0.0f), ErrorKind::parameter);
  EXPECT_QCG_ERROR(compute_range(kSample, Granularity::per_tensor, 1.5f), ErrorKind::parameter);
  EXPECT_QCG_ERROR(compute_range(Tensor({4}, std::vector<float>(4, 1)), Granularity::per_column),
                   ErrorKind::dimension);
}

TEST(Quantize, PerTensorWorkedExample) {
  const auto qt = quantize(kSample, Granularity::per_tensor, 8);
  EXPECT_EQ(ints(qt), (std::vector<std::int32_t>{32, -64, 16, 127}));
  EXPECT_FLOAT_EQ(qt.params().scale[0], 31.75f);
  EXPECT_EQ(qt.q().dtype(), DType::i8);
}

TEST(Quantize, PerColumnWorkedExample) {
  const auto qt = quantize(kSample, Granularity::per_column, 8);
  // Row-major [[c0, c1], [c0, c1]]: column 0 -> [127, 64], column 1 -> [-64, 127].
  EXPECT_EQ(ints(qt), (std::vector<std::int32_t>{127, -64, 64, 127}));
  EXPECT_FLOAT_EQ(qt.params().scale[0], 127.0f);
  EXPECT_FLOAT_EQ(qt.params().scale[1], 31.75f);
}

TEST(Quantize, AllZeroTensor) {
  const auto qt = quantize(Tensor::zeros({3, 2}), Granularity::per_column, 8);
  EXPECT_EQ(ints(qt), std::vector<std::int32_t>(6, 0));
  EXPECT_EQ(qt.params().scale, (std::vector<float>{1.0f, 1.0f}));
  EXPECT_EQ(quant_noise(Tensor::zeros({3, 2}), qt).q_a, 0.0);
}

TEST(Quantize, WideGridsStoreInt32) {
  EXPECT_EQ(quantize(kSample, Granularity::per_tensor, 12).q().dtype(), DType::i32);
  EXPECT_EQ(quantize(kSample, Granularity::per_tensor, 4).q().dtype(), DType::i8);
  EXPECT_QCG_ERROR(quantize(kSample, Granularity::per_tensor, 17), ErrorKind::parameter);
}

TEST(Quantize, MatchesScalarOracle) {
  Rng rng(2);
  for (int rep = 0; rep < 60; ++rep) {
    const int bits = 2 + static_cast<int>(rng.uniform_int(15));
    const auto g = rep % 2 ? Granularity::per_column : Granularity::per_tensor;
    const float ratio = static_cast<float>(rng.uniform(0.3, 1.0));
    const Tensor t = random_normal({6, 7}, rng, 3.0f);
    const auto qt = quantize(t, g, bits, ratio);
    for (std::size_t i = 0; i < t.size(); ++i)
      ASSERT_EQ(qt.at(i), scalar_quantize(t.f32()[i], qt.params().alpha[qt.group_of(i)], bits))
          << "bits " << bits << " element " << i;
  }
}

TEST(Quantize, ScaleTimesAlphaIsQmax) {
  Rng rng(3);
  for (int bits : {2, 4, 8, 12, 16}) {
    const auto qt = quantize(random_normal({8, 8}, rng), Granularity::per_column, bits);
    for (std::size_t g = 0; g < qt.params().groups(); ++g)
      EXPECT_NEAR(static_cast<double>(qt.params().scale[g]) * qt.params().alpha[g], qmax_for(bits),
                  1e-6 * qmax_for(bits));
  }
}

TEST(Quantize, GroupCountFollowsGranularity) {
  Rng rng(4);
  const Tensor t = random_normal({3, 11}, rng);
  EXPECT_EQ(quantize(t, Granularity::per_tensor, 8).params().groups(), 1u);
  EXPECT_EQ(quantize(t, Granularity::per_column, 8).params().groups(), 11u);
}

TEST(QuantizedTensor, RejectsOutOfRangeAndWrongGroups) {
  QuantParams p{{1.0f}, {127.0f}, 8, Granularity::per_tensor};
  EXPECT_QCG_ERROR(QuantizedTensor(Tensor({1}, std::vector<std::int8_t>{-128}), p), ErrorKind::inconsistency);
  EXPECT_QCG_ERROR(QuantizedTensor(Tensor({1}, std::vector<float>{1}), p), ErrorKind::inconsistency);
  QuantParams pc{{1.0f}, {127.0f}, 8, Granularity::per_column};
  EXPECT_QCG_ERROR(QuantizedTensor(Tensor({2, 2}, std::vector<std::int8_t>(4)), pc), ErrorKind::inconsistency);
}

TEST(Dequantize, WorkedExamples) {
  const QuantParams p{{4.0f}, {31.75f}, 8, Granularity::per_tensor};
  EXPECT_EQ(dequantize(QuantizedTensor(Tensor({1, 1}, std::vector<std::int8_t>{127}), p)).f32()[0], 4.0f);
  EXPECT_NEAR(dequantize(QuantizedTensor(Tensor({1, 1}, std::vector<std::int8_t>{32}), p)).f32()[0], 1.0078740,
              1e-6);
  EXPECT_EQ(dequantize(QuantizedTensor(Tensor({2, 2}, std::vector<std::int8_t>(4)), p)), Tensor::zeros({2, 2}));
}

TEST(RoundTrip, ErrorWithinHalfStep) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const int bits = std::vector<int>{2, 4, 6, 8, 12, 16}[rep % 6];
    const auto g = rep % 2 ? Granularity::per_column : Granularity::per_tensor;
    const float ratio = rep % 3 ? 1.0f : static_cast<float>(rng.uniform(0.2, 1.0));
    const Tensor x = random_normal({5, 9}, rng, static_cast<float>(rng.uniform(0.01, 10.0)));
    const auto qt = quantize(x, g, bits, ratio);
    const Tensor y = dequantize(qt);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = qt.params().alpha[qt.group_of(i)];
      const double clipped = std::clamp(static_cast<double>(x.f32()[i]), -a, a);
      const double bound = 0.5 / qt.params().scale[qt.group_of(i)] + std::ldexp(std::fabs(y.f32()[i]), -24) +
                           std::ldexp(a, -23);  // alpha itself is a rounded float
      ASSERT_LE(std::fabs(clipped - y.f32()[i]), bound);
    }
  }
}

TEST(RoundTrip, ColumnStepNeverExceedsTensorStep) {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor x = random_normal({7, 13}, rng);
    const auto pt = quantize(x, Granularity::per_tensor, 8), pc = quantize(x, Granularity::per_column, 8);
    for (std::size_t g = 0; g < pc.params().groups(); ++g) EXPECT_LE(pc.params().step(g), pt.params().step(0));
  }
}

TEST(Noise, GridAlignedIsExactlyZero) {
  const Tensor x({2, 2}, std::vector<float>(4, 0.75f));
  EXPECT_EQ(quant_noise(x, quantize(x, Granularity::per_tensor, 8)).q_a, 0.0);
}

TEST(Noise, UniformMatrixAtEightBits) {
  Rng rng(7);
  const Tensor x = random_uniform({512, 512}, rng, -1.0f, 1.0f);
  const double q8 = quant_noise(x, quantize(x, Granularity::per_tensor, 8)).q_a;
  const double q4 = quant_noise(x, quantize(x, Granularity::per_tensor, 4)).q_a;
  EXPECT_LE(q8, 0.006);
  EXPECT_GT(q4, q8);
}

TEST(Noise, ZeroIffExactAndNonNegative) {
  Rng rng(8);
  const Tensor x = random_normal({4, 4}, rng);
  const auto r = quant_noise(x, quantize(x, Granularity::per_tensor, 8));
  EXPECT_GT(r.q_a, 0.0);
  EXPECT_GT(r.approx_q_a, 0.0);
  EXPECT_EQ(r.step.size(), 1u);
}

TEST(Noise, ZeroNormWithNonzeroCodesIsInconsistent) {
  const auto qt = quantize(Tensor({1, 2}, std::vector<float>{1, 1}), Granularity::per_tensor, 8);
  EXPECT_QCG_ERROR(quant_noise(Tensor::zeros({1, 2}), qt), ErrorKind::inconsistency);
}

TEST(Noise, NonIncreasingInBitwidth) {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = random_normal({16, 16}, rng);
    double prev = 1e9;
    for (int bits : {4, 6, 8, 12, 16}) {
      const double q = quant_noise(x, quantize(x, Granularity::per_tensor, bits)).q_a;
      EXPECT_LE(q, prev) << bits;
      prev = q;
    }
  }
}

TEST(Noise, PerColumnBeatsPerTensorOnOutlierMatrices) {
  double pt = 0.0, pc = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor m = synth_outlier_matrix(64, seed);
    pt += quant_noise(m, quantize(m, Granularity::per_tensor, 8)).q_a;
    pc += quant_noise(m, quantize(m, Granularity::per_column, 8)).q_a;
  }
  EXPECT_LT(pc, pt);
}

TEST(IntMatmul, WorkedExample) {
  const QuantParams p{{1.0f}, {127.0f}, 8, Granularity::per_tensor};
  const QuantizedTensor a(Tensor({1, 2}, std::vector<std::int8_t>{127, 0}), p);
  const QuantizedTensor w(Tensor({2, 1}, std::vector<std::int8_t>{127, 0}), p);
  EXPECT_EQ(int_matmul(a, w).f32()[0], 1.0f);
}

TEST(IntMatmul, ZeroWeightsGiveZero) {
  Rng rng(10);
  const auto a = quantize(random_normal({3, 8}, rng), Granularity::per_tensor, 8);
  const auto w = quantize(Tensor::zeros({8, 4}), Granularity::per_column, 8);
  EXPECT_EQ(int_matmul(a, w), Tensor::zeros({3, 4}));
}

TEST(IntMatmul, MatchesDequantizedProductWithBias) {
  Rng rng(11);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t m = 1 + rng.uniform_int(8), k = 1 + rng.uniform_int(100), n = 1 + rng.uniform_int(8);
    const auto aq = quantize(random_normal({m, k}, rng), Granularity::per_tensor, 8);
    const auto wq = quantize(random_normal({k, n}, rng), rep % 2 ? Granularity::per_column : Granularity::per_tensor, 8);
    const Tensor bias = random_normal({n}, rng);
    const Tensor got = int_matmul(aq, wq, &bias);
    const Tensor ad = dequantize(aq), wd = dequantize(wq);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double ref = bias.f32()[j];
        for (std::size_t p = 0; p < k; ++p) ref += static_cast<double>(ad.f32()[i * k + p]) * wd.f32()[p * n + j];
        EXPECT_NEAR(got.f32()[i * n + j], ref, 1e-5 * (1.0 + std::fabs(ref)));
      }
  }
}

TEST(IntMatmul, Errors) {
  Rng rng(12);
  const auto a = quantize(random_normal({2, 3}, rng), Granularity::per_tensor, 8);
  const auto w = quantize(random_normal({4, 2}, rng), Granularity::per_tensor, 8);
  EXPECT_QCG_ERROR(int_matmul(a, w), ErrorKind::dimension);
  const auto ac = quantize(random_normal({2, 4}, rng), Granularity::per_column, 8);
  EXPECT_QCG_ERROR(int_matmul(ac, w), ErrorKind::parameter);
  const Tensor bad_bias = Tensor::zeros({3});
  const auto a4 = quantize(random_normal({2, 4}, rng), Granularity::per_tensor, 8);
  EXPECT_QCG_ERROR(int_matmul(a4, w, &bad_bias), ErrorKind::dimension);
}

TEST(IntMatmul, OverflowBound) {
  EXPECT_TRUE(accumulator_fits<std::int32_t>(std::size_t{1} << 15, 127, 127));
  EXPECT_FALSE(accumulator_fits<std::int32_t>(std::size_t{1} << 18, 127, 127));
  EXPECT_FALSE(accumulator_fits<std::int32_t>(256, 32767, 32767));
  EXPECT_TRUE(accumulator_fits<std::int64_t>(256, 32767, 32767));

  Rng rng(13);
  const auto a = quantize(random_normal({1, 256}, rng), Granularity::per_tensor, 16);
  const auto w = quantize(random_normal({256, 2}, rng), Granularity::per_tensor, 16);
  EXPECT_QCG_ERROR(int_matmul(a, w), ErrorKind::overflow_risk);
  const Tensor got = int_matmul_auto(a, w);
  const Tensor ref = matmul(dequantize(a), dequantize(w));
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(got.f32()[j], ref.f32()[j], 1e-4);
}

}  // namespace
}  // namespace qcg
