// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcg/error.hpp"
#include "qcg/model.hpp"
#include "qcg/numerics.hpp"
#include "qcg/quantizer.hpp"

// QTZ1 weight files:
//
//   "QTZ1" | u8 version = 1 | u32 json_len | json (UTF-8)
//   u32 tensor_count
//   per tensor: u16 name_len | name | u8 dtype | u8 rank | rank x u64 dims | payload
//
// All integers little-endian, payloads raw row-major. Quantized weights are
// stored as integer tensors under "<layer>.weight" with their per-group
// scales in a sibling f32 tensor "<layer>.weight.scale". Tensors are written
// in name order so identical bundles serialize to identical bytes.

namespace qcg {

using json = nlohmann::json;

inline constexpr char kMagic[4] = {'Q', 'T', 'Z', '1'};
inline constexpr std::uint8_t kFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.insert(buf_.end(), b, b + sizeof(T));
  }
  void put_bytes(std::span<const std::byte> bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    buf_.insert(buf_.end(), p, p + bytes.size());
  }
  void put_string(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<unsigned char> take() { return std::move(buf_); }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> data) : data_(data) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> get_array(std::size_t n) {
    require(n <= remaining() / sizeof(T), ErrorKind::truncated, "payload extends past end of file");
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    require(remaining() >= n, ErrorKind::truncated, "unexpected end of file");
  }
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

inline json scheme_to_json(const QuantScheme& s) {
  return json{{"mode", to_string(s.mode)},
              {"weight_granularity", to_string(s.weight_granularity)},
              {"weight_bits", s.weight_bits},
              {"activation_bits", s.activation_bits},
              {"quantize_head", s.quantize_head}};
}

inline QuantScheme scheme_from_json(const json& j) {
  QuantScheme s;
  s.mode = parse_quant_mode(j.at("mode").get<std::string>());
  s.weight_granularity = parse_granularity(j.at("weight_granularity").get<std::string>());
  s.weight_bits = j.at("weight_bits").get<int>();
  s.activation_bits = j.at("activation_bits").get<int>();
  s.quantize_head = j.value("quantize_head", false);
  return s;
}

}  // namespace detail

inline json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},     {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  return c;
}

inline std::vector<unsigned char> serialize_bundle(const ModelBundle& m) {
  json header;
  header["config"] = config_to_json(m.config);
  header["scheme"] = m.quant ? detail::scheme_to_json(m.quant->scheme) : json(nullptr);
  json scales = json::object();
  if (m.quant)
    for (const auto& [layer, s] : m.quant->activation_scales)
      scales[layer] = json{{"alpha", s.alpha}, {"ratio", s.ratio}};
  header["scales"] = scales;
  const std::string text = header.dump();

  std::vector<Tensor> owned;
  std::map<std::string, const Tensor*> ordered;
  for (const auto& [name, t] : m.tensors) ordered.emplace(name, &t);
  if (m.quant) {
    owned.reserve(m.quant->weights.size());
    for (const auto& [layer, qt] : m.quant->weights) {
      ordered.emplace(layer + ".weight", &qt.q());
      owned.emplace_back(Shape{qt.params().groups()}, qt.params().scale);
      ordered.emplace(layer + ".weight.scale", &owned.back());
    }
  }

  detail::ByteWriter w;
  for (char c : kMagic) w.put(c);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_string(text);
  w.put(static_cast<std::uint32_t>(ordered.size()));
  for (const auto& [name, t] : ordered) {
    require(name.size() <= 0xFFFF, ErrorKind::parameter, "tensor name too long");
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put(static_cast<std::uint8_t>(t->dtype()));
    w.put(static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_bytes(t->bytes());
  }
  return w.take();
}

inline ModelBundle deserialize_bundle(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::bad_magic, "not a QTZ1 file");
  const auto version = r.get<std::uint8_t>();
  require(version == kFormatVersion, ErrorKind::bad_version,
          "unsupported QTZ1 version " + std::to_string(version));
  const auto json_len = r.get<std::uint32_t>();
  json header;
  try {
    header = json::parse(r.get_string(json_len));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad header JSON: ") + e.what());
  }

  ModelBundle m;
  std::optional<QuantScheme> scheme;
  ActivationScales scales;
  try {
    m.config = config_from_json(header.at("config"));
    if (!header.at("scheme").is_null()) scheme = detail::scheme_from_json(header.at("scheme"));
    const json table = header.value("scales", json::object());
    for (const auto& [layer, s] : table.items())
      scales[layer] = {s.at("alpha").get<float>(), s.at("ratio").get<float>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad header fields: ") + e.what());
  }
  m.config.validate();

  std::map<std::string, Tensor> raw;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.get_string(r.get<std::uint16_t>());
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    require(rank > 0, ErrorKind::shape_mismatch, "tensor '" + name + "' has rank 0");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      const auto dim = r.get<std::uint64_t>();
      require(dim > 0 && dim <= (std::uint64_t{1} << 40), ErrorKind::shape_mismatch,
              "tensor '" + name + "' has an invalid dimension");
      d = static_cast<std::size_t>(dim);
      require(n <= (std::size_t{1} << 40) / d, ErrorKind::shape_mismatch, "tensor '" + name + "' is too large");
      n *= d;
    }
    Tensor t;
    switch (static_cast<DType>(dtype)) {
      case DType::f32: t = Tensor(shape, r.get_array<float>(n)); break;
      case DType::i8: t = Tensor(shape, r.get_array<std::int8_t>(n)); break;
      case DType::i32: t = Tensor(shape, r.get_array<std::int32_t>(n)); break;
      default: throw Error(ErrorKind::parse, "tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    require(raw.emplace(name, std::move(t)).second, ErrorKind::parse, "duplicate tensor '" + name + "'");
  }
  require(r.remaining() == 0, ErrorKind::parse, "trailing bytes after last tensor");

  std::set<std::string> quantized_layers;
  if (scheme) {
    require(scheme->mode != QuantMode::fp32, ErrorKind::parse, "quantized bundle with fp32 scheme");
    scheme->validate();
    for (const auto& l : linear_layer_names(m.config, scheme->quantize_head)) quantized_layers.insert(l);
  }

  for (const auto& [name, shape] : tensor_layout(m.config)) {
    const auto layer = name.ends_with(".weight") ? name.substr(0, name.size() - 7) : std::string{};
    auto it = raw.find(name);
    require(it != raw.end(), ErrorKind::shape_mismatch, "missing tensor '" + name + "'");
    require(it->second.shape() == shape, ErrorKind::shape_mismatch,
            "tensor '" + name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                shape_string(shape));
    if (!layer.empty() && quantized_layers.count(layer)) continue;
    require(it->second.dtype() == DType::f32, ErrorKind::shape_mismatch, "tensor '" + name + "' must be f32");
    m.tensors.emplace(name, std::move(it->second));
    raw.erase(it);
  }

  if (scheme) {
    QuantState state;
    state.scheme = *scheme;
    state.activation_scales = std::move(scales);
    const auto qm = qmax_for(scheme->weight_bits);
    const DType want = scheme->weight_bits <= 8 ? DType::i8 : DType::i32;
    for (const auto& layer : quantized_layers) {
      auto wit = raw.find(layer + ".weight");
      auto sit = raw.find(layer + ".weight.scale");
      require(sit != raw.end(), ErrorKind::shape_mismatch, "missing scale tensor for '" + layer + "'");
      const Tensor& q = wit->second;
      require(q.dtype() == want, ErrorKind::shape_mismatch, "quantized weight '" + layer + "' has the wrong dtype");
      const std::size_t groups = scheme->weight_granularity == Granularity::per_tensor ? 1 : q.cols();
      require(sit->second.dtype() == DType::f32 && sit->second.shape() == Shape{groups}, ErrorKind::shape_mismatch,
              "scale tensor for '" + layer + "' has the wrong shape");
      QuantParams p;
      p.bitwidth = scheme->weight_bits;
      p.granularity = scheme->weight_granularity;
      p.scale.assign(sit->second.f32().begin(), sit->second.f32().end());
      // A nonzero group always holds a +-qmax entry, so an all-zero group
      // can only come from a zero clip range.
      std::vector<bool> nonzero(groups, false);
      for (std::size_t i = 0; i < q.size(); ++i) {
        const std::int32_t v = want == DType::i8 ? q.i8()[i] : q.i32()[i];
        if (v != 0) nonzero[groups == 1 ? 0 : i % groups] = true;
      }
      for (std::size_t g = 0; g < groups; ++g) {
        require(std::isfinite(p.scale[g]) && p.scale[g] > 0.0f, ErrorKind::parse, "non-positive weight scale");
        p.alpha.push_back(nonzero[g] ? static_cast<float>(qm) / p.scale[g] : 0.0f);
      }
      try {
        state.weights.emplace(layer, QuantizedTensor(q, std::move(p)));
      } catch (const Error& e) {
        throw Error(ErrorKind::parse, "quantized weight '" + layer + "': " + e.what());
      }
      raw.erase(wit);
      raw.erase(sit);
    }
    m.quant = std::move(state);
  }
  require(raw.empty(), ErrorKind::parse, "unexpected tensor '" + (raw.empty() ? "" : raw.begin()->first) + "'");
  return m;
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "short write to '" + path.string() + "'");
}

inline void save_bundle(const ModelBundle& m, const std::filesystem::path& path) {
  write_file(path, serialize_bundle(m));
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
  return deserialize_bundle(read_file(path));
}

/// Calls fn(object, line_number) for every non-blank line of a JSON Lines file.
inline void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const json&, int)>& fn) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Token sequences, one `{"tokens": [...]}` object per line.
inline std::vector<std::vector<Token>> read_token_sequences(const std::filesystem::path& path) {
  std::vector<std::vector<Token>> out;
  for_each_jsonl(path, [&](const json& j, int) { out.push_back(j.at("tokens").get<std::vector<Token>>()); });
  return out;
}

inline std::string token_sequences_to_jsonl(const std::vector<std::vector<Token>>& seqs) {
  std::string s;
  for (const auto& seq : seqs) s += json{{"tokens", seq}}.dump() + "\n";
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline std::vector<Token> bytes_to_tokens(std::string_view text) {
  std::vector<Token> out;
  for (unsigned char c : text) out.push_back(c);
  return out;
}

}  // namespace qcg
