// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>
#include <vector>

#include "qcg/eval.hpp"
#include "unit.hpp"

namespace qcg {
namespace {

using testing::TempDir;

// Fraction of k-subsets of n samples (c of them correct) containing a pass.
double enumerate_pass_at_k(int n, int c, int k) {
  long hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    ++total;
    hit += (mask & ((1u << c) - 1)) != 0;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

// Two-sided exact rank-sum p-value for tie-free samples by enumeration.
double enumerate_rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  auto rank = [&](double v) { return static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin()) + 1; };
  const double n = static_cast<double>(pooled.size()), na = static_cast<double>(a.size());
  double ra = 0.0;
  for (double v : a) ra += rank(v);
  const double mid = na * (n + 1) / 2;
  long extreme = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << pooled.size()); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
    double r = 0.0;
    for (std::size_t i = 0; i < pooled.size(); ++i)
      if (mask & (1u << i)) r += rank(pooled[i]);
    ++total;
    extreme += std::fabs(r - mid) >= std::fabs(ra - mid);
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

TEST(PassAtK, WorkedExamples) {
  EXPECT_EQ(pass_at_k(10, 10, 1), 1.0);
  EXPECT_NEAR(pass_at_k(10, 3, 1), 0.3, 1e-15);
  EXPECT_NEAR(pass_at_k(5, 2, 3), 0.9, 1e-15);
  EXPECT_EQ(pass_at_k(10, 0, 5), 0.0);
}

TEST(PassAtK, MatchesEnumeration) {
  for (int n = 1; n <= 8; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) EXPECT_NEAR(pass_at_k(n, c, k), enumerate_pass_at_k(n, c, k), 1e-12);
}

TEST(PassAtK, MonotoneInKAndC) {
  for (int n = 1; n <= 20; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        if (k < n) EXPECT_LE(pass_at_k(n, c, k), pass_at_k(n, c, k + 1) + 1e-15);
        if (c < n) EXPECT_LE(pass_at_k(n, c, k), pass_at_k(n, c + 1, k) + 1e-15);
      }
}

TEST(PassAtK, LargeNStaysFinite) {
  const double v = pass_at_k(2000, 1, 1000);
  EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(PassAtK, Errors) {
  EXPECT_QCG_ERROR(pass_at_k(0, 0, 1), ErrorKind::parameter);
  EXPECT_QCG_ERROR(pass_at_k(5, 6, 1), ErrorKind::parameter);
  EXPECT_QCG_ERROR(pass_at_k(5, -1, 1), ErrorKind::parameter);
  EXPECT_QCG_ERROR(pass_at_k(5, 2, 0), ErrorKind::parameter);
  EXPECT_QCG_ERROR(pass_at_k(5, 2, 6), ErrorKind::parameter);
}

TaskResult task(const std::string& id, int n, int c) {
  TaskResult t{id, std::vector<bool>(n, false)};
  for (int i = 0; i < c; ++i) t.passes[i] = true;
  return t;
}

TEST(Aggregate, MeanOfTasks) {
  EXPECT_NEAR(aggregate_pass_at_k({task("a", 10, 3), task("b", 10, 10)}, 1), 0.65, 1e-15);
  EXPECT_EQ(aggregate_pass_at_k({task("a", 10, 10), task("b", 10, 10)}, 5), 1.0);
  EXPECT_QCG_ERROR(aggregate_pass_at_k({}, 1), ErrorKind::empty_input);
  EXPECT_QCG_ERROR(aggregate_pass_at_k({task("a", 10, 3), task("b", 9, 3)}, 1), ErrorKind::inconsistency);
}

TEST(Aggregate, ReadsJsonl) {
  TempDir dir;
  write_text(dir / "r.jsonl", R"({"task_id": "t1", "passes": [true, false]}
{"task_id": "t2", "passes": [false, false]}
)");
  const auto m = read_pass_matrix(dir / "r.jsonl");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].task_id, "t1");
  EXPECT_EQ(m[0].c(), 1);
  EXPECT_EQ(aggregate_pass_at_k(m, 1), 0.25);
  write_text(dir / "bad.jsonl", R"({"task_id": "t1", "passes": "yes"})");
  EXPECT_QCG_ERROR(read_pass_matrix(dir / "bad.jsonl"), ErrorKind::parse);
}

TEST(Drop, Arithmetic) {
  EXPECT_EQ(robustness_drop(0.3, 0.3), 0.0);
  EXPECT_NEAR(robustness_drop(0.20, 0.18), 10.0, 1e-12);
  EXPECT_NEAR(robustness_drop(0.20, 0.22), -10.0, 1e-12);
  EXPECT_QCG_ERROR(robustness_drop(0.0, 0.1), ErrorKind::parameter);
}

TEST(RankSum, SeparatedSamples) {
  const auto r = rank_sum_test({1, 2, 3}, {4, 5, 6});
  EXPECT_EQ(r.u, 0.0);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.p_value, 0.1, 1e-15);
  const auto s = rank_sum_test({4, 5, 6}, {1, 2, 3});
  EXPECT_EQ(s.u, 9.0);
  EXPECT_EQ(s.p_value, r.p_value);
}

TEST(RankSum, IdenticalSamples) {
  EXPECT_GE(rank_sum_test({1, 2, 3, 4}, {1, 2, 3, 4}).p_value, 0.99);
  EXPECT_GE(rank_sum_test({5, 5, 5}, {5, 5, 5}).p_value, 0.99);
  std::vector<double> big;
  for (int i = 0; i < 30; ++i) big.push_back(i % 7);
  const auto r = rank_sum_test(big, big);
  EXPECT_FALSE(r.exact);
  EXPECT_GE(r.p_value, 0.99);
}

TEST(RankSum, ExactMatchesEnumerationOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t na = 1 + rng.uniform_int(6), nb = 1 + rng.uniform_int(12 - na);
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal() + 0.5;
    const auto r = rank_sum_test(a, b);
    EXPECT_TRUE(r.exact);
    EXPECT_NEAR(r.p_value, enumerate_rank_sum_p(a, b), 1e-12);
    EXPECT_EQ(r.p_value, rank_sum_test(b, a).p_value);
  }
}

TEST(RankSum, NormalApproximation) {
  // a = 1..10, b = 11..20: U = 0, sd = sqrt(100 * 21 / 12), z = (50 - 0.5) / sd.
  std::vector<double> a, b;
  for (int i = 1; i <= 10; ++i) a.push_back(i), b.push_back(i + 10);
  const auto r = rank_sum_test(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_EQ(r.u, 0.0);
  const double z = 49.5 / std::sqrt(100.0 * 21.0 / 12.0);
  EXPECT_NEAR(r.p_value, std::erfc(z / std::sqrt(2.0)), 1e-15);
  EXPECT_QCG_ERROR(rank_sum_test({}, {1.0}), ErrorKind::parameter);
}

TEST(RankSum, TiesUseMidranks) {
  // Pooled {1,1,2,2}: midranks 1.5,1.5,3.5,3.5; a = {1,1} has rank sum 3, U = 0.
  const auto r = rank_sum_test({1, 1}, {2, 2});
  EXPECT_EQ(r.u, 0.0);
  // Of the 6 labelings, rank sums {3,5,5,5,5,7}; |R - 5| >= 2 in two of them.
  EXPECT_NEAR(r.p_value, 2.0 / 6.0, 1e-15);
}

TEST(Bleu, WorkedExamples) {
  EXPECT_EQ(smoothed_bleu("x = foo ( a , b )", "x = foo ( a , b )"), 1.0);
  EXPECT_EQ(smoothed_bleu("a b c d", "e f g h"), 0.0);
  const double hand = std::pow(3.0 / 4 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  EXPECT_NEAR(smoothed_bleu("a b c d", "a b c e"), hand, 1e-12);
  EXPECT_NEAR(hand, 0.658, 0.001);
  EXPECT_EQ(smoothed_bleu("", "a b"), 0.0);
  EXPECT_QCG_ERROR(smoothed_bleu("a", "  "), ErrorKind::input);
}

TEST(Bleu, BrevityPenalty) {
  // Candidate "a b" against "a b c d": p1 = 1, p2 = 2/2, p3 = p4 = 1/1, penalty exp(1 - 2).
  EXPECT_NEAR(smoothed_bleu("a b", "a b c d"), std::exp(-1.0), 1e-12);
}

TEST(Bleu, OrderMatters) {
  EXPECT_GT(smoothed_bleu("a b c d", "a b c d"), smoothed_bleu("d c b a", "a b c d"));
}

TEST(Bleu, AlwaysInUnitInterval) {
  Rng rng(9);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  for (int t = 0; t < 200; ++t) {
    std::vector<std::string> c(1 + rng.uniform_int(8)), r(1 + rng.uniform_int(8));
    for (auto& w : c) w = vocab[rng.uniform_int(vocab.size())];
    for (auto& w : r) w = vocab[rng.uniform_int(vocab.size())];
    const double s = smoothed_bleu(c, r);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Bleu, ReadsPairs) {
  TempDir dir;
  write_text(dir / "p.jsonl", R"({"candidate": "a b", "reference": "a b"})" "\n");
  EXPECT_EQ(read_bleu_pairs(dir / "p.jsonl").size(), 1u);
  write_text(dir / "e.jsonl", R"({"candidate": "a b", "reference": ""})" "\n");
  EXPECT_QCG_ERROR(read_bleu_pairs(dir / "e.jsonl"), ErrorKind::input);
}

}  // namespace
}  // namespace qcg
