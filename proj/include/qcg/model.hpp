// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qcg/error.hpp"
#include "qcg/numerics.hpp"
#include "qcg/quantizer.hpp"

namespace qcg {

using Token = std::uint32_t;

/// Decoder-only transformer shape. Byte-level vocabulary by default.
struct ModelConfig {
  int vocab_size = 256;
  int d_model = 256;
  int n_heads = 4;
  int n_layers = 8;
  int d_ff = 1024;
  int max_seq_len = 128;

  void validate() const {
    require(vocab_size > 0 && d_model > 0 && n_heads > 0 && n_layers > 0 && d_ff > 0 && max_seq_len > 0,
            ErrorKind::parameter, "model config fields must be positive");
    require(d_model % n_heads == 0, ErrorKind::parameter, "d_model must be divisible by n_heads");
  }

  /// V*d + S*d + L*(4*(d*d + d) + 2*d*f + f + d + 4*d) + 2*d + d*V
  std::size_t parameter_count() const {
    const std::size_t v = vocab_size, d = d_model, f = d_ff, s = max_seq_len, l = n_layers;
    const std::size_t per_layer = 4 * (d * d + d) + d * f + f + f * d + d + 4 * d;
    return v * d + s * d + l * per_layer + 2 * d + d * v;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// fp32 runs the float graph; weight_only quantizes weights and keeps float
/// activations; dynamic and static quantize both, differing only in where
/// the activation clip range comes from.
enum class QuantMode { fp32, weight_only, dynamic, static_range };

inline std::string to_string(QuantMode m) {
  switch (m) {
    case QuantMode::fp32: return "fp32";
    case QuantMode::weight_only: return "weight-only";
    case QuantMode::dynamic: return "dynamic";
    case QuantMode::static_range: return "static";
  }
  return "fp32";
}

inline QuantMode parse_quant_mode(const std::string& s) {
  if (s == "fp32") return QuantMode::fp32;
  if (s == "weight-only") return QuantMode::weight_only;
  if (s == "dynamic") return QuantMode::dynamic;
  if (s == "static") return QuantMode::static_range;
  throw Error(ErrorKind::parameter, "unknown quantization mode '" + s + "'");
}

struct QuantScheme {
  QuantMode mode = QuantMode::fp32;
  Granularity weight_granularity = Granularity::per_tensor;
  int weight_bits = 8;
  int activation_bits = 8;
  bool quantize_head = false;

  static QuantScheme fp32() { return {}; }
  static QuantScheme make(QuantMode mode, Granularity g, int wbits, int abits) {
    return {mode, g, wbits, abits, false};
  }

  bool quantizes_activations() const {
    return mode == QuantMode::dynamic || mode == QuantMode::static_range;
  }

  void validate() const {
    if (mode == QuantMode::fp32) return;
    qmax_for(weight_bits);
    if (quantizes_activations()) qmax_for(activation_bits);
  }

  /// Two schemes produce the same quantized weights.
  bool same_weights(const QuantScheme& o) const {
    return weight_granularity == o.weight_granularity && weight_bits == o.weight_bits &&
           quantize_head == o.quantize_head;
  }

  friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

/// Calibrated activation clip range of one quantized layer's input.
struct ActivationScale {
  float alpha = 1.0f;
  float ratio = 1.0f;
  friend bool operator==(const ActivationScale&, const ActivationScale&) = default;
};
using ActivationScales = std::map<std::string, ActivationScale>;

struct QuantState {
  QuantScheme scheme;
  std::map<std::string, QuantizedTensor> weights;  ///< keyed by layer name
  ActivationScales activation_scales;
  friend bool operator==(const QuantState&, const QuantState&) = default;
};

struct ModelBundle {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;
  std::optional<QuantState> quant;

  const Tensor& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    require(it != tensors.end(), ErrorKind::lookup, "bundle has no tensor '" + name + "'");
    return it->second;
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

inline constexpr const char* kBlockLinears[] = {"attn.q", "attn.k", "attn.v", "attn.out", "ffn.in", "ffn.out"};

inline std::string layer_prefix(int layer) { return "layers." + std::to_string(layer) + "."; }

/// Quantizable linear layers in forward order.
inline std::vector<std::string> linear_layer_names(const ModelConfig& cfg, bool include_head = false) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (const char* lin : kBlockLinears) names.push_back(layer_prefix(l) + lin);
  if (include_head) names.emplace_back("head");
  return names;
}

/// Expected shape of every tensor of an fp32 bundle, in initialization order.
inline std::vector<std::pair<std::string, Shape>> tensor_layout(const ModelConfig& cfg) {
  const std::size_t v = cfg.vocab_size, d = cfg.d_model, f = cfg.d_ff, s = cfg.max_seq_len;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"tok_emb", {v, d}});
  out.push_back({"pos_emb", {s, d}});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto p = layer_prefix(l);
    out.push_back({p + "ln1.gain", {d}});
    out.push_back({p + "ln1.bias", {d}});
    for (const char* lin : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      out.push_back({p + lin + ".weight", {d, d}});
      out.push_back({p + lin + ".bias", {d}});
    }
    out.push_back({p + "ln2.gain", {d}});
    out.push_back({p + "ln2.bias", {d}});
    out.push_back({p + "ffn.in.weight", {d, f}});
    out.push_back({p + "ffn.in.bias", {f}});
    out.push_back({p + "ffn.out.weight", {f, d}});
    out.push_back({p + "ffn.out.bias", {d}});
  }
  out.push_back({"ln_f.gain", {d}});
  out.push_back({"ln_f.bias", {d}});
  out.push_back({"head.weight", {d, v}});
  return out;
}

/// Activation-outlier channels planted in the fixture. Trained transformers
/// carry a few residual channels with very large magnitude; random weights do
/// not, so the fixture reproduces them through layer-norm gains.
struct FixtureOptions {
  int outlier_channels = -1;  ///< -1 means max(1, d_model / 128)
  float outlier_gain = 8.0f;
};

/// Deterministic stand-in model: Gaussian(0, 0.02) weights and embeddings,
/// zero biases, unit layer-norm gains except the outlier channels, which use
/// the same seeded positions in every layer norm.
inline ModelBundle init_fixture(const ModelConfig& cfg, std::uint64_t seed, FixtureOptions opts = {}) {
  cfg.validate();
  ModelBundle m;
  m.config = cfg;
  Rng rng(seed);

  const int n_outliers = opts.outlier_channels < 0 ? std::max(1, cfg.d_model / 128) : opts.outlier_channels;
  require(n_outliers <= cfg.d_model, ErrorKind::parameter, "more outlier channels than d_model");
  std::vector<float> gain(static_cast<std::size_t>(cfg.d_model), 1.0f);
  {
    Rng pick = rng.fork(0);
    std::vector<bool> taken(gain.size(), false);
    for (int placed = 0; placed < n_outliers;) {
      const auto c = pick.uniform_int(gain.size());
      if (taken[c]) continue;
      taken[c] = true;
      gain[c] = opts.outlier_gain;
      ++placed;
    }
  }

  for (const auto& [name, shape] : tensor_layout(cfg)) {
    if (name.ends_with(".gain")) {
      m.tensors.emplace(name, Tensor(shape, gain));
    } else if (name.ends_with(".bias")) {
      m.tensors.emplace(name, Tensor::zeros(shape));
    } else {
      m.tensors.emplace(name, random_normal(shape, rng, 0.02f));
    }
  }
  return m;
}

/// Replaces every quantizable weight with its quantized form. Biases, norms
/// and embeddings stay fp32.
inline ModelBundle quantize_model(const ModelBundle& m, const QuantScheme& scheme, ActivationScales scales = {}) {
  require(scheme.mode != QuantMode::fp32, ErrorKind::parameter, "quantize_model needs a non-fp32 scheme");
  require(!m.quant.has_value(), ErrorKind::parameter, "bundle is already quantized");
  scheme.validate();
  ModelBundle out;
  out.config = m.config;
  QuantState state;
  state.scheme = scheme;
  state.activation_scales = std::move(scales);
  const auto layers = linear_layer_names(m.config, scheme.quantize_head);
  for (const auto& [name, t] : m.tensors) out.tensors.emplace(name, t);
  for (const auto& layer : layers) {
    const auto key = layer + ".weight";
    state.weights.emplace(layer, quantize(m.tensor(key), scheme.weight_granularity, scheme.weight_bits));
    out.tensors.erase(key);
  }
  out.quant = std::move(state);
  return out;
}

/// Fully-precision bundle with every quantized weight replaced by Q(W).
inline ModelBundle dequantize_model(const ModelBundle& m) {
  require(m.quant.has_value(), ErrorKind::parameter, "bundle is not quantized");
  ModelBundle out;
  out.config = m.config;
  out.tensors = m.tensors;
  for (const auto& [layer, qt] : m.quant->weights) out.tensors.emplace(layer + ".weight", dequantize(qt));
  return out;
}

struct ForwardResult {
  Tensor logits;                ///< [seq x vocab]
  std::vector<Tensor> hidden;   ///< post-block residual stream, one per layer
  /// Activation clip range used at each quantized layer input (empty unless
  /// activations are quantized), in forward order.
  std::vector<std::pair<std::string, float>> activation_alpha;
};

/// Called with each quantizable layer's (float) input before quantization.
using ActivationObserver = std::function<void(const std::string& layer, const Tensor& input)>;

namespace detail {

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t t = x.rows(), d = x.cols();
  const auto xv = x.f32();
  const auto g = gain.f32();
  const auto b = bias.f32();
  std::vector<float> out(t * d);
  for (std::size_t i = 0; i < t; ++i) {
    const float* row = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = static_cast<float>((row[j] - mean) * inv) * g[j] + b[j];
  }
  return Tensor({t, d}, std::move(out));
}

inline Tensor add_bias(const Tensor& y, const Tensor& bias) {
  const std::size_t t = y.rows(), n = y.cols();
  std::vector<float> out(y.f32().begin(), y.f32().end());
  const auto b = bias.f32();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return Tensor({t, n}, std::move(out));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  std::vector<float> out(a.f32().begin(), a.f32().end());
  const auto bv = b.f32();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor(a.shape(), std::move(out));
}

inline Tensor gelu(const Tensor& x) {
  std::vector<float> out(x.size());
  const auto v = x.f32();
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = 0.5f * v[i] * (1.0f + std::erf(v[i] * 0.70710678118654752f));
  return Tensor(x.shape(), std::move(out));
}

inline Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads) {
  const std::size_t t = q.rows(), d = q.cols(), dh = d / static_cast<std::size_t>(n_heads);
  const auto qv = q.f32(), kv = k.f32(), vv = v.f32();
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> out(t * d, 0.0f);
  std::vector<float> p(t);
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < t; ++i) {
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        float s = 0.0f;
        for (std::size_t c = 0; c < dh; ++c) s += qv[i * d + off + c] * kv[j * d + off + c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      float* o = out.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const float w = static_cast<float>(p[j] / z);
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * vv[j * d + off + c];
      }
    }
  }
  return Tensor({t, d}, std::move(out));
}

/// Resolves and applies the linear layers of one bundle under one scheme.
class LinearRunner {
 public:
  LinearRunner(const ModelBundle& m, const QuantScheme& scheme, const ActivationObserver& observer,
               ForwardResult& result)
      : m_(m), scheme_(scheme), observer_(observer), result_(result) {}

  Tensor operator()(const std::string& layer, const Tensor& x, bool has_bias = true) const {
    if (observer_) observer_(layer, x);
    const Tensor* bias = has_bias ? &m_.tensor(layer + ".bias") : nullptr;
    const QuantizedTensor* wq = nullptr;
    if (m_.quant) {
      auto it = m_.quant->weights.find(layer);
      if (it != m_.quant->weights.end()) wq = &it->second;
    }
    if (wq == nullptr) {
      Tensor y = matmul(x, m_.tensor(layer + ".weight"));
      return bias ? add_bias(y, *bias) : y;
    }
    if (!scheme_.quantizes_activations()) {
      Tensor y = matmul(x, dequantize(*wq));
      return bias ? add_bias(y, *bias) : y;
    }
    float alpha;
    if (scheme_.mode == QuantMode::dynamic) {
      alpha = max_abs(x.f32());
    } else {
      const auto& scales = m_.quant->activation_scales;
      auto it = scales.find(layer);
      require(it != scales.end(), ErrorKind::missing_calibration,
              "static mode needs a calibrated activation range for '" + layer + "'");
      alpha = it->second.alpha;
    }
    result_.activation_alpha.emplace_back(layer, alpha);
    const auto aq = quantize_with_range(x, Granularity::per_tensor, scheme_.activation_bits, {alpha});
    return int_matmul_auto(aq, *wq, bias);
  }

 private:
  const ModelBundle& m_;
  const QuantScheme& scheme_;
  const ActivationObserver& observer_;
  ForwardResult& result_;
};

inline ForwardResult forward_prepared(const ModelBundle& m, std::span<const Token> tokens, const QuantScheme& scheme,
                                      const ActivationObserver& observer) {
  const auto& cfg = m.config;
  require(!tokens.empty(), ErrorKind::input, "forward needs at least one token");
  require(tokens.size() <= static_cast<std::size_t>(cfg.max_seq_len), ErrorKind::input,
          "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len");
  for (auto tok : tokens)
    require(tok < static_cast<Token>(cfg.vocab_size), ErrorKind::input,
            "token id " + std::to_string(tok) + " out of range");

  ForwardResult result;
  const LinearRunner linear(m, scheme, observer, result);
  const std::size_t t = tokens.size(), d = cfg.d_model;
  const auto tok = m.tensor("tok_emb").f32();
  const auto pos = m.tensor("pos_emb").f32();
  std::vector<float> x0(t * d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) x0[i * d + j] = tok[tokens[i] * d + j] + pos[i * d + j];
  Tensor x({t, d}, std::move(x0));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto p = layer_prefix(l);
    const Tensor h = layer_norm(x, m.tensor(p + "ln1.gain"), m.tensor(p + "ln1.bias"));
    const Tensor q = linear(p + "attn.q", h);
    const Tensor k = linear(p + "attn.k", h);
    const Tensor v = linear(p + "attn.v", h);
    const Tensor att = causal_attention(q, k, v, cfg.n_heads);
    x = add(x, linear(p + "attn.out", att));
    const Tensor h2 = layer_norm(x, m.tensor(p + "ln2.gain"), m.tensor(p + "ln2.bias"));
    const Tensor f = gelu(linear(p + "ffn.in", h2));
    x = add(x, linear(p + "ffn.out", f));
    result.hidden.push_back(x);
  }
  const Tensor hf = layer_norm(x, m.tensor("ln_f.gain"), m.tensor("ln_f.bias"));
  result.logits = linear("head", hf, false);
  return result;
}

}  // namespace detail

/// Runs the decoder on one token sequence. A float bundle is quantized on the
/// fly for non-fp32 schemes; a quantized bundle must have been quantized with
/// the same weight settings as `scheme`.
inline ForwardResult forward(const ModelBundle& m, std::span<const Token> tokens, const QuantScheme& scheme,
                             const ActivationObserver& observer = {}) {
  if (scheme.mode == QuantMode::fp32) {
    require(!m.quant.has_value(), ErrorKind::parameter, "a quantized bundle holds no fp32 weights");
    return detail::forward_prepared(m, tokens, scheme, observer);
  }
  if (!m.quant) return detail::forward_prepared(quantize_model(m, scheme), tokens, scheme, observer);
  require(m.quant->scheme.same_weights(scheme), ErrorKind::inconsistency,
          "scheme weight settings differ from the bundle's quantized weights");
  scheme.validate();
  return detail::forward_prepared(m, tokens, scheme, observer);
}

/// Forward under the bundle's own scheme (fp32 for unquantized bundles).
inline ForwardResult forward(const ModelBundle& m, std::span<const Token> tokens) {
  return forward(m, tokens, m.quant ? m.quant->scheme : QuantScheme::fp32());
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct DecodeStrategy {
  enum class Kind { greedy, temperature };
  Kind kind = Kind::greedy;
  float temperature = 1.0f;
  std::uint64_t seed = 0;

  static DecodeStrategy greedy() { return {}; }
  static DecodeStrategy sample(float tau, std::uint64_t seed) { return {Kind::temperature, tau, seed}; }
};

/// Autoregressive decoding without a KV cache; returns only the new tokens.
inline std::vector<Token> generate(const ModelBundle& m, std::span<const Token> prompt, int max_new,
                                   const DecodeStrategy& strategy, const QuantScheme& scheme) {
  require(max_new > 0, ErrorKind::parameter, "max_new must be positive");
  require(!prompt.empty(), ErrorKind::input, "prompt must be nonempty");
  require(prompt.size() + static_cast<std::size_t>(max_new) <= static_cast<std::size_t>(m.config.max_seq_len),
          ErrorKind::parameter, "prompt plus max_new exceeds max_seq_len");
  if (strategy.kind == DecodeStrategy::Kind::temperature)
    require(strategy.temperature > 0.0f, ErrorKind::parameter, "temperature must be positive");

  // Quantize once rather than per step.
  const ModelBundle* model = &m;
  std::optional<ModelBundle> prepared;
  if (scheme.mode != QuantMode::fp32 && !m.quant) {
    prepared = quantize_model(m, scheme);
    model = &*prepared;
  }

  Rng rng(strategy.seed);
  std::vector<Token> seq(prompt.begin(), prompt.end());
  std::vector<Token> out;
  for (int step = 0; step < max_new; ++step) {
    const auto res = forward(*model, seq, scheme);
    const std::size_t v = res.logits.cols();
    const auto last = res.logits.f32().subspan((seq.size() - 1) * v, v);
    Token next;
    if (strategy.kind == DecodeStrategy::Kind::greedy) {
      next = static_cast<Token>(argmax(last));
    } else {
      const float mx = last[argmax(last)];
      std::vector<double> w(v);
      double z = 0.0;
      for (std::size_t i = 0; i < v; ++i) {
        w[i] = std::exp((static_cast<double>(last[i]) - mx) / strategy.temperature);
        z += w[i];
      }
      double u = rng.uniform() * z;
      next = static_cast<Token>(v - 1);
      for (std::size_t i = 0; i < v; ++i) {
        if (u < w[i]) {
          next = static_cast<Token>(i);
          break;
        }
        u -= w[i];
      }
    }
    seq.push_back(next);
    out.push_back(next);
  }
  return out;
}

/// Fraction of positions whose argmax token matches between two logit sets.
inline double top1_agreement(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::dimension, "logit shapes differ");
  const std::size_t t = a.rows(), v = a.cols();
  std::size_t same = 0;
  for (std::size_t i = 0; i < t; ++i)
    same += argmax(a.f32().subspan(i * v, v)) == argmax(b.f32().subspan(i * v, v));
  return static_cast<double>(same) / static_cast<double>(t);
}

}  // namespace qcg
