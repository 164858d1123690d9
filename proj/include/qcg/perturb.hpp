// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qcg/error.hpp"
#include "qcg/io.hpp"
#include "qcg/numerics.hpp"

namespace qcg {

enum class PerturbLevel { character, word, sentence };

inline PerturbLevel parse_perturb_level(const std::string& s) {
  if (s == "char") return PerturbLevel::character;
  if (s == "word") return PerturbLevel::word;
  if (s == "sentence") return PerturbLevel::sentence;
  throw Error(ErrorKind::parameter, "unknown perturbation level '" + s + "'");
}

// Artifact defaults; the reference augmentation framework's own rates are
// not available offline.
inline constexpr double kDefaultCharRate = 0.15;
inline constexpr double kDefaultWordRate = 0.15;

namespace detail {

inline bool ascii_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool ascii_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
inline char ascii_upper(char c) { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = ascii_lower(c);
  return out;
}

inline void check_rate(double rate) {
  require(rate >= 0.0 && rate <= 1.0, ErrorKind::parameter, "perturbation rate must lie in [0, 1]");
}

}  // namespace detail

/// Uppercases each ASCII lowercase letter independently with probability
/// `rate`. One draw per lowercase letter; every other byte is copied.
inline std::string perturb_char(std::string_view text, double rate, std::uint64_t seed) {
  detail::check_rate(rate);
  Rng rng(seed);
  std::string out(text);
  for (auto& c : out)
    if (c >= 'a' && c <= 'z' && rng.uniform() < rate) c = detail::ascii_upper(c);
  return out;
}

/// Lowercase word -> synonyms.
class SynonymLexicon {
 public:
  SynonymLexicon() = default;

  void add(const std::string& word, std::vector<std::string> synonyms) {
    require(!word.empty(), ErrorKind::parse, "lexicon entry with an empty word");
    require(!synonyms.empty(), ErrorKind::parse, "lexicon entry '" + word + "' has no synonyms");
    for (const auto& s : synonyms) {
      require(!s.empty(), ErrorKind::parse, "lexicon entry '" + word + "' has an empty synonym");
      for (char c : s)
        require(!detail::ascii_space(c), ErrorKind::parse, "synonym '" + s + "' contains whitespace");
    }
    require(entries_.emplace(detail::lower(word), std::move(synonyms)).second, ErrorKind::parse,
            "duplicate lexicon entry '" + word + "'");
  }

  const std::vector<std::string>* find(std::string_view lowercase_word) const {
    auto it = entries_.find(std::string(lowercase_word));
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }

  /// TSV: `word<TAB>syn1<TAB>syn2...` per line; blank lines are skipped.
  static SynonymLexicon parse(std::string_view tsv) {
    SynonymLexicon lex;
    std::size_t start = 0;
    int lineno = 0;
    while (start <= tsv.size()) {
      auto end = tsv.find('\n', start);
      if (end == std::string_view::npos) end = tsv.size();
      std::string_view line = tsv.substr(start, end - start);
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.find_first_not_of(" \t") != std::string_view::npos) {
        std::vector<std::string> fields;
        std::size_t f = 0;
        while (true) {
          auto tab = line.find('\t', f);
          fields.emplace_back(line.substr(f, tab == std::string_view::npos ? std::string_view::npos : tab - f));
          if (tab == std::string_view::npos) break;
          f = tab + 1;
        }
        try {
          require(fields.size() >= 2, ErrorKind::parse, "expected word and at least one synonym");
          lex.add(fields[0], std::vector<std::string>(fields.begin() + 1, fields.end()));
        } catch (const Error& e) {
          throw Error(ErrorKind::parse, "lexicon line " + std::to_string(lineno) + ": " + e.what());
        }
      }
      if (end == tsv.size()) break;
      start = end + 1;
    }
    return lex;
  }

  static SynonymLexicon load(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

/// Replaces lexicon words with a uniformly chosen synonym with probability
/// `rate`. Whitespace is preserved byte for byte; trailing punctuation is
/// stripped for lookup and re-attached; a capitalized word keeps its capital.
inline std::string perturb_word(std::string_view text, const SynonymLexicon& lexicon, double rate,
                                std::uint64_t seed) {
  detail::check_rate(rate);
  Rng rng(seed);
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (detail::ascii_space(text[i])) {
      out += text[i++];
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !detail::ascii_space(text[j])) ++j;
    const std::string_view token = text.substr(i, j - i);
    std::size_t core_len = token.size();
    while (core_len > 0 && !detail::ascii_alnum(token[core_len - 1])) --core_len;
    const std::string_view core = token.substr(0, core_len);
    const auto* synonyms = core.empty() ? nullptr : lexicon.find(detail::lower(core));
    if (synonyms && rng.uniform() < rate) {
      std::string replacement = (*synonyms)[rng.uniform_int(synonyms->size())];
      if (core[0] >= 'A' && core[0] <= 'Z') replacement[0] = detail::ascii_upper(replacement[0]);
      out += replacement;
      out += token.substr(core_len);
    } else {
      out += token;
    }
    i = j;
  }
  return out;
}

/// Pre-computed paraphrases keyed by prompt id.
class ParaphraseTable {
 public:
  void add(const std::string& id, std::string paraphrase) {
    require(entries_.emplace(id, std::move(paraphrase)).second, ErrorKind::parse, "duplicate paraphrase id '" + id + "'");
  }

  /// Reads `{"id": "...", "paraphrase": "..."}` lines.
  static ParaphraseTable load(const std::filesystem::path& path) {
    ParaphraseTable t;
    for_each_jsonl(path, [&](const json& j, int) {
      t.add(j.at("id").get<std::string>(), j.at("paraphrase").get<std::string>());
    });
    return t;
  }

  const std::string& at(const std::string& id) const {
    auto it = entries_.find(id);
    require(it != entries_.end(), ErrorKind::lookup, "no paraphrase for prompt id '" + id + "'");
    return it->second;
  }

  std::string to_jsonl() const {
    std::string s;
    for (const auto& [id, p] : entries_) s += json{{"id", id}, {"paraphrase", p}}.dump() + "\n";
    return s;
  }

 private:
  std::map<std::string, std::string> entries_;
};

inline std::string perturb_sentence(const std::string& prompt_id, const ParaphraseTable& paraphrases) {
  return paraphrases.at(prompt_id);
}

}  // namespace qcg
