// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qcg/calibrate.hpp"
#include "qcg/error.hpp"
#include "qcg/io.hpp"
#include "qcg/model.hpp"
#include "qcg/numerics.hpp"
#include "qcg/quantizer.hpp"
#include "qcg/report.hpp"

namespace qcg {

inline std::size_t outlier_count(std::size_t width) { return (width + 255) / 256; }

/// width x width Gaussian(0, 1) matrix with ceil(width / 256) planted entries
/// of magnitude 0.05 * width (random sign) at distinct seeded positions.
inline Tensor synth_outlier_matrix(std::size_t width, std::uint64_t seed) {
  require(width >= 8, ErrorKind::parameter, "outlier matrix width must be at least 8");
  Rng rng(seed);
  std::vector<float> v(width * width);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  Rng place = rng.fork(1);
  const float magnitude = 0.05f * static_cast<float>(width);
  std::vector<std::size_t> chosen;
  while (chosen.size() < outlier_count(width)) {
    const auto pos = place.uniform_int(v.size());
    if (std::find(chosen.begin(), chosen.end(), pos) != chosen.end()) continue;
    chosen.push_back(pos);
    v[pos] = place.uniform() < 0.5 ? -magnitude : magnitude;
  }
  return Tensor({width, width}, std::move(v));
}

struct NoiseSweepRow {
  std::size_t width = 0;
  Granularity granularity = Granularity::per_tensor;
  double q_a = 0.0;
};

inline std::vector<NoiseSweepRow> noise_sweep(const std::vector<std::size_t>& widths,
                                              const std::vector<Granularity>& granularities, int bitwidth,
                                              std::uint64_t seed, unsigned threads = 1) {
  for (std::size_t i = 1; i < widths.size(); ++i)
    require(widths[i] > widths[i - 1], ErrorKind::parameter, "widths must be ascending");
  qmax_for(bitwidth);
  std::vector<NoiseSweepRow> rows(widths.size() * granularities.size());
  // One matrix per width; cells of the same width share it.
  parallel_for(widths.size(), threads, [&](std::size_t wi) {
    const Tensor m = synth_outlier_matrix(widths[wi], seed);
    for (std::size_t gi = 0; gi < granularities.size(); ++gi) {
      const auto qt = quantize(m, granularities[gi], bitwidth);
      rows[wi * granularities.size() + gi] = {widths[wi], granularities[gi], quant_noise(m, qt).q_a};
    }
  });
  return rows;
}

struct DepthLayer {
  int layer = 0;  ///< 1-based block index
  double mse = 0.0;
  std::optional<double> pearson;  ///< empty when either side has zero variance
};

struct DepthProfile {
  std::vector<DepthLayer> layers;
};

/// Pearson correlation in double precision; empty for zero variance.
inline std::optional<double> pearson(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::dimension, "pearson needs equal nonempty samples");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Per-block MSE and Pearson r between fp32 and quantized hidden states,
/// pooled over the whole probe set.
inline DepthProfile depth_profile(const ModelBundle& fp, const QuantScheme& scheme,
                                  const std::vector<std::vector<Token>>& probe, unsigned threads = 1) {
  require(!probe.empty(), ErrorKind::parameter, "probe set is empty");
  require(!fp.quant.has_value(), ErrorKind::parameter, "depth profile needs the fp32 bundle");
  std::optional<ModelBundle> qm;
  if (scheme.mode != QuantMode::fp32) qm = quantize_model(fp, scheme);
  const ModelBundle& other = qm ? *qm : fp;

  const std::size_t layers = static_cast<std::size_t>(fp.config.n_layers);
  std::vector<ForwardResult> a(probe.size()), b(probe.size());
  parallel_for(probe.size(), threads, [&](std::size_t i) {
    a[i] = forward(fp, probe[i], QuantScheme::fp32());
    b[i] = forward(other, probe[i], scheme);
  });

  DepthProfile out;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<float> xa, xb;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const auto va = a[i].hidden[l].f32(), vb = b[i].hidden[l].f32();
      xa.insert(xa.end(), va.begin(), va.end());
      xb.insert(xb.end(), vb.begin(), vb.end());
    }
    double sq = 0.0;
    for (std::size_t e = 0; e < xa.size(); ++e) {
      const double d = static_cast<double>(xa[e]) - xb[e];
      sq += d * d;
    }
    out.layers.push_back({static_cast<int>(l + 1), sq / static_cast<double>(xa.size()), pearson(xa, xb)});
  }
  return out;
}

struct MaxActivationRow {
  std::string layer;
  double min = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};

/// Distribution summary of the per-example max |x| of every layer input.
inline std::vector<MaxActivationRow> max_activation_report(const ActivationStats& stats) {
  require(!stats.layers.empty() && stats.examples > 0, ErrorKind::parameter, "activation statistics are empty");
  std::vector<MaxActivationRow> rows;
  for (const auto& l : stats.layers) {
    MaxActivationRow r;
    r.layer = l.layer;
    r.min = *std::min_element(l.max_abs.begin(), l.max_abs.end());
    r.max = *std::max_element(l.max_abs.begin(), l.max_abs.end());
    double sum = 0.0;
    for (float v : l.max_abs) sum += v;
    r.mean = sum / static_cast<double>(l.max_abs.size());
    double var = 0.0;
    for (float v : l.max_abs) var += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(var / static_cast<double>(l.max_abs.size()));
    rows.push_back(std::move(r));
  }
  return rows;
}

struct SizeReport {
  std::uintmax_t fp_bytes = 0;
  std::uintmax_t q_bytes = 0;
  double ratio = 0.0;
};

inline SizeReport size_report(const std::filesystem::path& fp_path, const std::filesystem::path& q_path) {
  SizeReport r;
  for (const auto& [path, bytes] : {std::pair{&fp_path, &r.fp_bytes}, std::pair{&q_path, &r.q_bytes}}) {
    const auto data = read_file(*path);
    try {
      deserialize_bundle(data);
    } catch (const Error& e) {
      throw Error(ErrorKind::io, "'" + path->string() + "' is not a valid QTZ1 bundle: " + e.what());
    }
    *bytes = data.size();
  }
  r.ratio = static_cast<double>(r.q_bytes) / static_cast<double>(r.fp_bytes);
  return r;
}

struct HostingConfig {
  double carbon_rate = 0.0;  ///< gCO2eq per host hour
  double price_rate = 0.0;   ///< currency per host hour
  double latency = 0.0;      ///< seconds per prediction
};

struct HostingEstimate {
  double hours = 0.0;
  double gco2eq = 0.0;
  double cost = 0.0;
};

/// Sequential-prediction estimate: emissions and price are linear in runtime.
inline HostingEstimate hosting_estimate(const HostingConfig& cfg, double predictions) {
  require(cfg.carbon_rate >= 0.0 && cfg.price_rate >= 0.0 && cfg.latency >= 0.0 && predictions >= 0.0,
          ErrorKind::parameter, "hosting inputs must be non-negative");
  HostingEstimate e;
  e.hours = cfg.latency * predictions / 3600.0;
  e.gco2eq = e.hours * cfg.carbon_rate;
  e.cost = e.hours * cfg.price_rate;
  return e;
}

struct MatmulDims {
  std::size_t m = 1, k = 1, n = 1;
};

/// Single-token feed-forward shapes at d_model 2560, 4096 and 6144.
inline std::vector<MatmulDims> default_bench_dims() { return {{1, 2560, 10240}, {1, 4096, 16384}, {1, 6144, 24576}}; }

struct BenchRow {
  MatmulDims dims;
  std::vector<double> fp32_ms;
  std::vector<double> int8_ms;  ///< includes dynamic activation quantization

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
  static double stddev(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
  }
};

/// Single-threaded wall-clock comparison of the fp32 and int8 matmul paths.
/// One untimed warm-up run per path precedes the measured repeats.
inline std::vector<BenchRow> int_matmul_bench(const std::vector<MatmulDims>& dims, int repeats,
                                              std::uint64_t seed = 0) {
  require(repeats >= 3, ErrorKind::parameter, "benchmark needs at least 3 repeats");
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  Rng rng(seed);
  for (const auto& d : dims) {
    require(d.m > 0 && d.k > 0 && d.n > 0, ErrorKind::parameter, "benchmark dims must be positive");
    const Tensor a = random_normal({d.m, d.k}, rng);
    const Tensor w = random_normal({d.k, d.n}, rng, 0.02f);
    const auto wq = quantize(w, Granularity::per_tensor, 8);
    BenchRow row{d, {}, {}};
    auto time = [&](auto&& fn, std::vector<double>& out) {
      fn();
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        fn();
        out.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      }
    };
    time([&] { return matmul(a, w); }, row.fp32_ms);
    time([&] { return int_matmul(quantize(a, Granularity::per_tensor, 8), wq); }, row.int8_ms);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Report adapters shared by the CLI and the tests.

inline Report to_report(const std::vector<NoiseSweepRow>& rows) {
  Report r{{"width", "granularity", "q_a"}, {}};
  for (const auto& x : rows) r.add({static_cast<std::int64_t>(x.width), to_string(x.granularity), x.q_a});
  return r;
}

inline Report to_report(const DepthProfile& p) {
  Report r{{"layer", "mse", "pearson"}, {}};
  for (const auto& l : p.layers)
    r.add({static_cast<std::int64_t>(l.layer), l.mse, l.pearson ? Cell(*l.pearson) : Cell(std::monostate{})});
  return r;
}

inline Report to_report(const std::vector<MaxActivationRow>& rows) {
  Report r{{"layer", "min", "max", "mean", "stddev"}, {}};
  for (const auto& x : rows) r.add({x.layer, x.min, x.max, x.mean, x.stddev});
  return r;
}

inline Report to_report(const SizeReport& s) {
  Report r{{"fp_bytes", "q_bytes", "ratio"}, {}};
  r.add({static_cast<std::int64_t>(s.fp_bytes), static_cast<std::int64_t>(s.q_bytes), s.ratio});
  return r;
}

inline Report to_report(const HostingEstimate& e) {
  Report r{{"hours", "gco2eq", "cost"}, {}};
  r.add({e.hours, e.gco2eq, e.cost});
  return r;
}

inline Report to_report(const std::vector<BenchRow>& rows) {
  Report r{{"m", "k", "n", "repeats", "fp32_mean_ms", "fp32_std_ms", "int8_mean_ms", "int8_std_ms"}, {}};
  for (const auto& x : rows)
    r.add({static_cast<std::int64_t>(x.dims.m), static_cast<std::int64_t>(x.dims.k),
           static_cast<std::int64_t>(x.dims.n), static_cast<std::int64_t>(x.fp32_ms.size()),
           BenchRow::mean(x.fp32_ms), BenchRow::stddev(x.fp32_ms), BenchRow::mean(x.int8_ms),
           BenchRow::stddev(x.int8_ms)});
  return r;
}

inline Report to_report(const std::vector<CalibrationSizeRow>& rows) {
  Report r{{"size", "agreement"}, {}};
  for (const auto& x : rows) r.add({static_cast<std::int64_t>(x.size), x.agreement});
  return r;
}

inline Report to_report(const ScaleTable& t) {
  Report r{{"layer", "alpha", "ratio", "global_max", "loss", "max_range_loss", "degenerate"}, {}};
  for (const auto& l : t.layers) r.add({l.layer, double(l.alpha), double(l.ratio), double(l.global_max), l.loss,
                                        l.max_range_loss, l.degenerate});
  return r;
}

}  // namespace qcg
