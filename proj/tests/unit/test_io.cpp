// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "qcg/io.hpp"
#include "qcg/model.hpp"
#include "unit.hpp"

namespace qcg {
namespace {

using testing::TempDir;
using Bytes = std::vector<unsigned char>;

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  c.max_seq_len = 8;
  return c;
}

template <typename T>
T read_le(const Bytes& b, std::size_t at) {
  T v;
  std::memcpy(&v, b.data() + at, sizeof v);
  return v;
}

// Walks the container by hand and returns tensor names in file order.
std::vector<std::string> walk(const Bytes& b, nlohmann::json& header) {
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "QTZ1");
  EXPECT_EQ(b[4], 1);
  const auto len = read_le<std::uint32_t>(b, 5);
  header = nlohmann::json::parse(std::string(b.begin() + 9, b.begin() + 9 + len));
  std::size_t at = 9 + len;
  const auto count = read_le<std::uint32_t>(b, at);
  at += 4;
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = read_le<std::uint16_t>(b, at);
    names.emplace_back(b.begin() + at + 2, b.begin() + at + 2 + nlen);
    at += 2 + nlen;
    const auto dtype = b[at], rank = b[at + 1];
    at += 2;
    std::uint64_t n = 1;
    for (int d = 0; d < rank; ++d, at += 8) n *= read_le<std::uint64_t>(b, at);
    at += n * (dtype == 1 ? 1 : 4);
  }
  EXPECT_EQ(at, b.size());
  return names;
}

TEST(Qtz, LayoutMatchesHandWalk) {
  const auto m = init_fixture(tiny_config(), 1);
  const auto bytes = serialize_bundle(m);
  nlohmann::json header;
  const auto names = walk(bytes, header);
  EXPECT_TRUE(header.at("scheme").is_null());
  EXPECT_EQ(header.at("config").at("d_model"), 8);
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
  EXPECT_EQ(names.size(), tensor_layout(m.config).size());
}

TEST(Qtz, QuantizedLayoutHasScaleSiblings) {
  const auto q = quantize_model(init_fixture(tiny_config(), 1),
                                QuantScheme::make(QuantMode::dynamic, Granularity::per_column, 8, 8));
  nlohmann::json header;
  const auto names = walk(serialize_bundle(q), header);
  EXPECT_EQ(header.at("scheme").at("mode"), "dynamic");
  EXPECT_EQ(header.at("scheme").at("weight_granularity"), "per-column");
  for (const auto& l : linear_layer_names(q.config)) {
    EXPECT_NE(std::find(names.begin(), names.end(), l + ".weight"), names.end());
    EXPECT_NE(std::find(names.begin(), names.end(), l + ".weight.scale"), names.end());
  }
}

TEST(Qtz, FloatRoundTripIsExact) {
  const auto m = init_fixture(tiny_config(), 2);
  const auto back = deserialize_bundle(serialize_bundle(m));
  EXPECT_EQ(back, m);
  const std::vector<Token> tokens{1, 2, 3};
  EXPECT_EQ(forward(back, tokens).logits, forward(m, tokens).logits);
}

TEST(Qtz, QuantizedRoundTripIsByteIdentical) {
  const auto m = init_fixture(tiny_config(), 3);
  for (int bits : {4, 8, 12}) {
    for (auto g : {Granularity::per_tensor, Granularity::per_column}) {
      auto s = QuantScheme::make(QuantMode::static_range, g, bits, 8);
      s.quantize_head = bits == 12;
      ActivationScales scales;
      for (const auto& l : linear_layer_names(m.config, s.quantize_head)) scales[l] = {1.25f, 0.625f};
      const auto q = quantize_model(m, s, scales);
      const auto bytes = serialize_bundle(q);
      const auto back = deserialize_bundle(bytes);
      EXPECT_EQ(serialize_bundle(back), bytes);
      EXPECT_EQ(back.quant->scheme, s);
      EXPECT_EQ(back.quant->activation_scales, scales);
      for (const auto& [layer, qt] : q.quant->weights) {
        EXPECT_EQ(back.quant->weights.at(layer).q(), qt.q());
        EXPECT_EQ(back.quant->weights.at(layer).params().scale, qt.params().scale);
      }
      const std::vector<Token> tokens{4, 5, 6};
      EXPECT_EQ(forward(back, tokens).logits, forward(q, tokens).logits);
    }
  }
}

TEST(Qtz, ZeroGroupAlphaSurvives) {
  auto m = init_fixture(tiny_config(), 4);
  m.tensors["layers.0.attn.q.weight"] = Tensor::zeros({8, 8});
  const auto q = quantize_model(m, QuantScheme::make(QuantMode::weight_only, Granularity::per_column, 8, 8));
  const auto back = deserialize_bundle(serialize_bundle(q));
  for (float a : back.quant->weights.at("layers.0.attn.q").params().alpha) EXPECT_EQ(a, 0.0f);
}

TEST(Qtz, BadMagic) {
  auto bytes = serialize_bundle(init_fixture(tiny_config(), 5));
  bytes[0] = 'X';
  EXPECT_QCG_ERROR(deserialize_bundle(bytes), ErrorKind::bad_magic);
}

TEST(Qtz, BadVersion) {
  auto bytes = serialize_bundle(init_fixture(tiny_config(), 5));
  bytes[4] = 2;
  EXPECT_QCG_ERROR(deserialize_bundle(bytes), ErrorKind::bad_version);
}

TEST(Qtz, TruncationAtEveryRegion) {
  const auto bytes = serialize_bundle(init_fixture(tiny_config(), 5));
  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const Bytes part(bytes.begin(), bytes.begin() + cut);
    EXPECT_QCG_ERROR(deserialize_bundle(part), ErrorKind::truncated);
  }
}

TEST(Qtz, TrailingBytes) {
  auto bytes = serialize_bundle(init_fixture(tiny_config(), 5));
  bytes.push_back(0);
  EXPECT_QCG_ERROR(deserialize_bundle(bytes), ErrorKind::parse);
}

TEST(Qtz, ShapeMismatch) {
  auto m = init_fixture(tiny_config(), 6);
  m.tensors["ln_f.gain"] = Tensor::zeros({9});
  EXPECT_QCG_ERROR(deserialize_bundle(serialize_bundle(m)), ErrorKind::shape_mismatch);
  m = init_fixture(tiny_config(), 6);
  m.tensors.erase("pos_emb");
  EXPECT_QCG_ERROR(deserialize_bundle(serialize_bundle(m)), ErrorKind::shape_mismatch);
}

TEST(Qtz, UnexpectedTensor) {
  auto m = init_fixture(tiny_config(), 6);
  m.tensors["extra"] = Tensor::zeros({1});
  EXPECT_QCG_ERROR(deserialize_bundle(serialize_bundle(m)), ErrorKind::parse);
}

TEST(Qtz, BadHeaderJson) {
  auto bytes = serialize_bundle(init_fixture(tiny_config(), 6));
  bytes[9] = '#';
  EXPECT_QCG_ERROR(deserialize_bundle(bytes), ErrorKind::parse);
}

TEST(Files, SaveLoadAndMissing) {
  TempDir dir;
  const auto m = init_fixture(tiny_config(), 7);
  save_bundle(m, dir / "m.qtz");
  EXPECT_EQ(load_bundle(dir / "m.qtz"), m);
  EXPECT_QCG_ERROR(load_bundle(dir / "absent.qtz"), ErrorKind::io);
}

TEST(Jsonl, TokenSequencesRoundTrip) {
  TempDir dir;
  const std::vector<std::vector<Token>> seqs{{1, 2, 3}, {255}, {}};
  write_text(dir / "t.jsonl", token_sequences_to_jsonl(seqs) + "\n   \n");
  EXPECT_EQ(read_token_sequences(dir / "t.jsonl"), seqs);
}

TEST(Jsonl, ErrorsCarryLineNumbers) {
  TempDir dir;
  write_text(dir / "bad.jsonl", "{\"tokens\": [1]}\n{oops\n");
  try {
    read_token_sequences(dir / "bad.jsonl");
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  write_text(dir / "field.jsonl", "{\"tok\": [1]}\n");
  EXPECT_QCG_ERROR(read_token_sequences(dir / "field.jsonl"), ErrorKind::parse);
}

TEST(Jsonl, BytesToTokens) {
  EXPECT_EQ(bytes_to_tokens("def "), (std::vector<Token>{100, 101, 102, 32}));
  EXPECT_EQ(bytes_to_tokens("\xff"), (std::vector<Token>{255}));
}

}  // namespace
}  // namespace qcg
