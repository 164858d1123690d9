// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qcg/error.hpp"
#include "qcg/io.hpp"

namespace qcg {

/// Unbiased pass@k: 1 - C(n-c, k) / C(n, k), as a running product
/// prod_{i=n-c+1}^{n} (1 - k / i) so no binomial is ever formed.
inline double pass_at_k(std::int64_t n, std::int64_t c, std::int64_t k) {
  require(n >= 1 && c >= 0 && c <= n, ErrorKind::parameter, "pass@k needs 0 <= c <= n and n >= 1");
  require(k >= 1 && k <= n, ErrorKind::parameter, "pass@k needs 1 <= k <= n");
  if (n - c < k) return 1.0;
  double miss = 1.0;
  for (std::int64_t i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

struct TaskResult {
  std::string task_id;
  std::vector<bool> passes;

  std::int64_t n() const { return static_cast<std::int64_t>(passes.size()); }
  std::int64_t c() const { return std::count(passes.begin(), passes.end(), true); }
};

using PassMatrix = std::vector<TaskResult>;

inline double aggregate_pass_at_k(const PassMatrix& m, std::int64_t k) {
  require(!m.empty(), ErrorKind::empty_input, "pass matrix has no tasks");
  const auto n = m.front().n();
  double sum = 0.0;
  for (const auto& t : m) {
    require(t.n() == n, ErrorKind::inconsistency,
            "task '" + t.task_id + "' has " + std::to_string(t.n()) + " samples, expected " + std::to_string(n));
    sum += pass_at_k(n, t.c(), k);
  }
  return sum / static_cast<double>(m.size());
}

/// Reads `{"task_id": "...", "passes": [true, false, ...]}` lines.
inline PassMatrix read_pass_matrix(const std::filesystem::path& path) {
  PassMatrix m;
  for_each_jsonl(path, [&](const json& j, int) {
    m.push_back({j.at("task_id").get<std::string>(), j.at("passes").get<std::vector<bool>>()});
  });
  return m;
}

/// Percentage drop of pass@1 under perturbation; negative means improvement.
inline double robustness_drop(double pass1_unperturbed, double pass1_perturbed) {
  require(pass1_unperturbed > 0.0, ErrorKind::parameter, "drop is undefined for a zero unperturbed score");
  return 100.0 * (pass1_unperturbed - pass1_perturbed) / pass1_unperturbed;
}

struct RankSumResult {
  double u = 0.0;    ///< Mann-Whitney U of the first sample
  double p_value = 1.0;  ///< two-sided
  bool exact = false;
};

inline constexpr std::size_t kExactRankSumLimit = 12;

namespace detail {

/// Midranks (1-based) of the pooled sample; also returns sum(t^3 - t) over tie groups.
inline std::vector<double> midranks(const std::vector<double>& pooled, double& tie_term) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return pooled[x] < pooled[y]; });
  std::vector<double> ranks(pooled.size());
  tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    const double ties = static_cast<double>(j - i + 1);
    tie_term += ties * ties * ties - ties;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Wilcoxon-Mann-Whitney rank-sum test with midranks for ties. Exact
/// permutation p-value when the pooled size is at most 12, otherwise the
/// normal approximation with tie and continuity corrections.
inline RankSumResult rank_sum_test(const std::vector<double>& a, const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), ErrorKind::parameter, "rank-sum test needs two nonempty samples");
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  double tie_term = 0.0;
  const auto ranks = detail::midranks(pooled, tie_term);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double big_n = na + nb;
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];

  RankSumResult res;
  res.u = ra - na * (na + 1.0) / 2.0;
  const double expected = na * (big_n + 1.0) / 2.0;
  const double observed_dev = std::fabs(ra - expected);

  if (pooled.size() <= kExactRankSumLimit) {
    // Enumerate every assignment of |a| pooled positions to the first sample.
    const std::size_t total = pooled.size();
    std::uint64_t extreme = 0, count = 0;
    for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
      double r = 0.0;
      for (std::size_t i = 0; i < total; ++i)
        if (mask & (1u << i)) r += ranks[i];
      ++count;
      // Rank sums are multiples of 0.5, so this comparison is exact.
      if (std::fabs(r - expected) >= observed_dev) ++extreme;
    }
    res.exact = true;
    res.p_value = static_cast<double>(extreme) / static_cast<double>(count);
    return res;
  }

  const double var = na * nb / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::fabs(res.u - na * nb / 2.0) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Sentence BLEU with ORANGE (add-one) smoothing of the n >= 2 precisions.
/// Unigram precision stays unsmoothed, so zero unigram overlap scores 0.
inline double smoothed_bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                            int max_n = 4) {
  require(max_n >= 1, ErrorKind::parameter, "max_n must be positive");
  require(!reference.empty(), ErrorKind::input, "reference must be nonempty");
  if (candidate.empty()) return 0.0;
  auto ngrams = [](const std::vector<std::string>& toks, int n) {
    std::map<std::vector<std::string>, int> counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
      ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                        toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return counts;
  };
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = ngrams(candidate, n);
    const auto ref = ngrams(reference, n);
    double matched = 0.0, total = 0.0;
    for (const auto& [g, cnt] : cand) {
      total += cnt;
      auto it = ref.find(g);
      if (it != ref.end()) matched += std::min(cnt, it->second);
    }
    double p;
    if (n == 1) {
      if (matched == 0.0) return 0.0;
      p = matched / total;
    } else {
      p = (matched + 1.0) / (total + 1.0);
    }
    log_sum += std::log(p);
  }
  double score = std::exp(log_sum / max_n);
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  if (c < r) score *= std::exp(1.0 - r / c);
  return score;
}

inline double smoothed_bleu(std::string_view candidate, std::string_view reference, int max_n = 4) {
  return smoothed_bleu(split_whitespace(candidate), split_whitespace(reference), max_n);
}

struct BleuPair {
  std::string candidate;
  std::string reference;
};

inline std::vector<BleuPair> read_bleu_pairs(const std::filesystem::path& path) {
  std::vector<BleuPair> out;
  for_each_jsonl(path, [&](const json& j, int line) {
    BleuPair p{j.at("candidate").get<std::string>(), j.at("reference").get<std::string>()};
    require(!split_whitespace(p.reference).empty(), ErrorKind::input,
            path.string() + ":" + std::to_string(line) + ": empty reference");
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace qcg
