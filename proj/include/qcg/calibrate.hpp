// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qcg/error.hpp"
#include "qcg/model.hpp"
#include "qcg/numerics.hpp"
#include "qcg/quantizer.hpp"

namespace qcg {

/// Activation statistics of one quantizable layer's input.
struct LayerActivationStats {
  std::string layer;
  std::vector<float> max_abs;    ///< one entry per example, in data order
  std::vector<float> reservoir;  ///< uniform sample of raw input values
  std::uint64_t seen = 0;        ///< raw values offered to the reservoir

  float global_max() const {
    float m = 0.0f;
    for (float v : max_abs) m = std::max(m, v);
    return m;
  }
  friend bool operator==(const LayerActivationStats&, const LayerActivationStats&) = default;
};

struct ActivationStats {
  std::vector<LayerActivationStats> layers;  ///< forward order
  std::size_t examples = 0;
  std::size_t sample_cap = 0;

  const LayerActivationStats& at(const std::string& name) const {
    for (const auto& l : layers)
      if (l.layer == name) return l;
    throw Error(ErrorKind::lookup, "no activation statistics for layer '" + name + "'");
  }
  friend bool operator==(const ActivationStats&, const ActivationStats&) = default;
};

inline constexpr std::size_t kDefaultSampleCap = 4096;
inline constexpr int kDefaultGridSize = 80;

/// Incremental statistics collector. Feeding sequences in order and
/// snapshotting gives exactly the statistics of every data prefix.
class StatsCollector {
 public:
  StatsCollector(const ModelBundle& m, std::size_t sample_cap, std::uint64_t seed)
      : model_(m), cap_(sample_cap) {
    require(!m.quant.has_value(), ErrorKind::parameter, "calibration runs on the fp32 model");
    require(sample_cap > 0, ErrorKind::parameter, "sample cap must be positive");
    const auto names = linear_layer_names(m.config);
    Rng root(seed);
    for (std::size_t i = 0; i < names.size(); ++i) {
      stats_.layers.push_back({names[i], {}, {}, 0});
      rngs_.push_back(root.fork(i));
      index_.emplace(names[i], i);
    }
    stats_.sample_cap = sample_cap;
  }

  void add(std::span<const Token> tokens) {
    forward(model_, tokens, QuantScheme::fp32(), [&](const std::string& layer, const Tensor& x) {
      auto it = index_.find(layer);
      if (it == index_.end()) return;  // the fp32 head is not calibrated
      auto& s = stats_.layers[it->second];
      auto& rng = rngs_[it->second];
      const auto v = x.f32();
      s.max_abs.push_back(max_abs(v));
      for (float val : v) {
        if (s.reservoir.size() < cap_) {
          s.reservoir.push_back(val);
        } else {
          const auto j = rng.uniform_int(s.seen + 1);
          if (j < cap_) s.reservoir[j] = val;
        }
        ++s.seen;
      }
    });
    ++stats_.examples;
  }

  const ActivationStats& stats() const noexcept { return stats_; }

 private:
  const ModelBundle& model_;
  std::size_t cap_;
  ActivationStats stats_;
  std::vector<Rng> rngs_;
  std::map<std::string, std::size_t> index_;
};

/// fp32 forward over every sequence, recording per-example max |x| of each
/// quantized layer's input plus a seeded reservoir of raw values.
inline ActivationStats collect_stats(const ModelBundle& m, const std::vector<std::vector<Token>>& data,
                                     std::size_t sample_cap = kDefaultSampleCap, std::uint64_t seed = 0) {
  require(!data.empty(), ErrorKind::parameter, "calibration data is empty");
  StatsCollector c(m, sample_cap, seed);
  for (const auto& seq : data) c.add(seq);
  return c.stats();
}

struct LayerScale {
  std::string layer;
  float alpha = 1.0f;
  float ratio = 1.0f;
  float global_max = 0.0f;
  double loss = 0.0;            ///< reservoir squared error at the chosen alpha
  double max_range_loss = 0.0;  ///< reservoir squared error at ratio 1.0
  std::vector<std::pair<float, double>> loss_curve;  ///< (ratio, summed squared error)
  bool degenerate = false;  ///< all-zero reservoir; alpha is the 1.0 sentinel
};

struct ScaleTable {
  int bitwidth = 8;
  std::vector<LayerScale> layers;

  ActivationScales activation_scales() const {
    ActivationScales out;
    for (const auto& l : layers) out[l.layer] = {l.alpha, l.ratio};
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers_json = nlohmann::json::object();
    for (const auto& l : layers) {
      auto curve = nlohmann::json::array();
      for (const auto& [ratio, loss] : l.loss_curve) curve.push_back({ratio, loss});
      layers_json[l.layer] = {{"alpha", l.alpha},           {"ratio", l.ratio},
                              {"global_max", l.global_max}, {"loss", l.loss},
                              {"max_range_loss", l.max_range_loss}, {"degenerate", l.degenerate},
                              {"loss_curve", curve}};
    }
    return {{"bitwidth", bitwidth}, {"layers", layers_json}};
  }
};

/// Parses `{"bitwidth": B, "layers": {"<name>": {"alpha": f, "ratio": f, ...}}}`;
/// only alpha and ratio are required.
inline ScaleTable scale_table_from_json(const nlohmann::json& j) {
  ScaleTable t;
  try {
    t.bitwidth = j.at("bitwidth").get<int>();
    for (const auto& [name, v] : j.at("layers").items()) {
      LayerScale s;
      s.layer = name;
      s.alpha = v.at("alpha").get<float>();
      s.ratio = v.at("ratio").get<float>();
      s.global_max = v.value("global_max", 0.0f);
      s.loss = v.value("loss", 0.0);
      s.max_range_loss = v.value("max_range_loss", 0.0);
      s.degenerate = v.value("degenerate", false);
      for (const auto& point : v.value("loss_curve", nlohmann::json::array()))
        s.loss_curve.emplace_back(point.at(0).get<float>(), point.at(1).get<double>());
      require(s.alpha > 0.0f, ErrorKind::parse, "layer '" + name + "' has a non-positive alpha");
      t.layers.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad scale table: ") + e.what());
  }
  qmax_for(t.bitwidth);
  return t;
}

/// Candidate clip ratios: grid_size evenly spaced values over [0.2, 1.0],
/// the last one exactly 1.0.
inline std::vector<float> clip_ratio_grid(int grid_size) {
  require(grid_size >= 2, ErrorKind::parameter, "grid size must be at least 2");
  std::vector<float> r(static_cast<std::size_t>(grid_size));
  for (int i = 0; i < grid_size; ++i)
    r[static_cast<std::size_t>(i)] = static_cast<float>(0.2 + 0.8 * i / (grid_size - 1));
  r.back() = 1.0f;
  return r;
}

/// Summed squared error of quantize-dequantize at clip range alpha.
inline double reservoir_loss(std::span<const float> samples, float alpha, int bitwidth) {
  if (samples.empty()) return 0.0;
  const Tensor t({samples.size()}, std::vector<float>(samples.begin(), samples.end()));
  const Tensor back = dequantize(quantize_with_range(t, Granularity::per_tensor, bitwidth, {alpha}));
  double loss = 0.0;
  const auto b = back.f32();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = static_cast<double>(b[i]) - samples[i];
    loss += d * d;
  }
  return loss;
}

/// Grid search per layer for the clip range minimizing reservoir MSE. Ties
/// go to the larger alpha.
inline ScaleTable calibrate_scales(const ActivationStats& stats, int bitwidth, int grid_size = kDefaultGridSize,
                                   unsigned threads = 1) {
  require(!stats.layers.empty() && stats.examples > 0, ErrorKind::parameter, "activation statistics are empty");
  qmax_for(bitwidth);
  const auto ratios = clip_ratio_grid(grid_size);
  ScaleTable table;
  table.bitwidth = bitwidth;
  table.layers.resize(stats.layers.size());
  parallel_for(stats.layers.size(), threads, [&](std::size_t li) {
    const auto& s = stats.layers[li];
    LayerScale out;
    out.layer = s.layer;
    out.global_max = s.global_max();
    const bool all_zero = std::all_of(s.reservoir.begin(), s.reservoir.end(), [](float v) { return v == 0.0f; });
    if (all_zero || out.global_max == 0.0f) {
      out.degenerate = true;
      table.layers[li] = std::move(out);
      return;
    }
    double best = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      const float alpha = ratios[i] * out.global_max;
      const double loss = reservoir_loss(s.reservoir, alpha, bitwidth);
      out.loss_curve.emplace_back(ratios[i], loss);
      if (i == 0 || loss <= best) {
        best = loss;
        out.alpha = alpha;
        out.ratio = ratios[i];
      }
    }
    out.loss = best;
    out.max_range_loss = out.loss_curve.back().second;
    table.layers[li] = std::move(out);
  });
  return table;
}

struct CalibrationSizeRow {
  std::size_t size = 0;
  double agreement = 0.0;  ///< top-1 agreement with fp32 on the probe set
};

struct SweepOptions {
  int activation_bits = 8;
  int weight_bits = 8;
  Granularity weight_granularity = Granularity::per_column;
  int grid_size = kDefaultGridSize;
  std::size_t sample_cap = kDefaultSampleCap;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Mean top-1 agreement of `scheme` against fp32 over the probe sequences.
inline double probe_agreement(const ModelBundle& quantized, const QuantScheme& scheme,
                              const std::vector<Tensor>& fp_logits, const std::vector<std::vector<Token>>& probe,
                              unsigned threads = 1) {
  require(!probe.empty() && fp_logits.size() == probe.size(), ErrorKind::parameter, "probe set is empty");
  std::vector<double> a(probe.size());
  parallel_for(probe.size(), threads, [&](std::size_t i) {
    a[i] = top1_agreement(fp_logits[i], forward(quantized, probe[i], scheme).logits);
  });
  double sum = 0.0;
  for (double v : a) sum += v;
  return sum / static_cast<double>(probe.size());
}

/// For each size, calibrate on the first `size` sequences and measure the
/// static-quantized model's agreement with fp32 on a held-out probe set.
inline std::vector<CalibrationSizeRow> calibration_size_sweep(const ModelBundle& m,
                                                              const std::vector<std::vector<Token>>& data,
                                                              const std::vector<std::size_t>& sizes,
                                                              const std::vector<std::vector<Token>>& probe,
                                                              const SweepOptions& opts = {}) {
  require(!sizes.empty(), ErrorKind::parameter, "no calibration sizes given");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    require(sizes[i] >= 1, ErrorKind::parameter, "calibration sizes must be positive");
    require(sizes[i] <= data.size(), ErrorKind::parameter,
            "calibration size " + std::to_string(sizes[i]) + " exceeds the " + std::to_string(data.size()) +
                " available sequences");
    if (i) require(sizes[i] > sizes[i - 1], ErrorKind::parameter, "calibration sizes must be ascending");
  }
  std::vector<Tensor> fp_logits(probe.size());
  parallel_for(probe.size(), opts.threads,
               [&](std::size_t i) { fp_logits[i] = forward(m, probe[i], QuantScheme::fp32()).logits; });

  const auto scheme = QuantScheme::make(QuantMode::static_range, opts.weight_granularity, opts.weight_bits,
                                        opts.activation_bits);
  const auto weights_only = quantize_model(m, scheme);
  std::vector<CalibrationSizeRow> rows;
  StatsCollector collector(m, opts.sample_cap, opts.seed);
  std::size_t fed = 0;
  for (auto size : sizes) {
    while (fed < size) collector.add(data[fed++]);
    const auto table = calibrate_scales(collector.stats(), opts.activation_bits, opts.grid_size, opts.threads);
    ModelBundle q = weights_only;
    q.quant->activation_scales = table.activation_scales();
    rows.push_back({size, probe_agreement(q, scheme, fp_logits, probe, opts.threads)});
  }
  return rows;
}

}  // namespace qcg
