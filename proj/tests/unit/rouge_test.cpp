#include <gtest/gtest.h>

#include <algorithm>

#include "structsum/rng.hpp"
#include "structsum/rouge.hpp"
#include "../support/rouge_oracle.hpp"

namespace structsum {
namespace {

using oracle::Seq;

Seq random_seq(Rng& rng, std::size_t min_len) {
  Seq s(min_len + rng.below(13 - min_len));
  for (auto& x : s) x = static_cast<int>(rng.below(5));
  return s;
}

TEST(Rouge, MatchesBruteForceOnRandomPairs) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const Seq cand = random_seq(rng, 0), ref = random_seq(rng, 2);
    for (std::size_t n : {1, 2}) EXPECT_NEAR(rouge_n(cand, ref, n).f, oracle::rouge_n_f(cand, ref, n), 1e-12);
    EXPECT_EQ(lcs_length(cand, ref), oracle::lcs(cand, ref));
    EXPECT_NEAR(rouge_l(cand, ref).f, oracle::rouge_l_f(cand, ref), 1e-12);
  }
}

TEST(Rouge, WorkedExamples) {
  const auto a = rouge_all("the cat sat", "the cat");
  EXPECT_DOUBLE_EQ(a.r1.p, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(a.r1.r, 1.0);
  EXPECT_DOUBLE_EQ(a.r1.f, 0.8);
  EXPECT_NEAR(rouge_all("a x c", "a b c").r1.f, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(lcs_length(std::vector<std::string>{"a", "b", "c"}, std::vector<std::string>{"a", "c"}), 2u);
  EXPECT_EQ(rouge_all("the the the", "the cat").r1.p, 1.0 / 3.0);  // clipping
}

TEST(Rouge, SymmetryOfFAndEdgeCases) {
  const auto ab = rouge_all("a b c d", "b c e"), ba = rouge_all("b c e", "a b c d");
  EXPECT_DOUBLE_EQ(ab.r1.f, ba.r1.f);
  EXPECT_DOUBLE_EQ(ab.r1.p, ba.r1.r);
  EXPECT_DOUBLE_EQ(ab.rl.f, ba.rl.f);
  EXPECT_EQ(rouge_all("", "a b").r1.f, 0.0);
  EXPECT_EQ(rouge_all("x", "a b").r2.f, 0.0);
  EXPECT_THROW(rouge_all("a", ""), ShapeError);
  EXPECT_THROW(rouge_n(Seq{1}, Seq{1}, 0), ShapeError);
}

TEST(Rouge, MeanOfScores) {
  const auto m = mean_rouge({rouge_all("a b", "a b"), rouge_all("x", "a b")});
  EXPECT_DOUBLE_EQ(m.r1.f, 0.5);
  EXPECT_DOUBLE_EQ(m.rl.r, 0.5);
}

TEST(PermutationTest, IdenticalListsGiveOne) {
  const std::vector<double> a = {0.1, 0.5, 0.3, 0.9};
  EXPECT_EQ(permutation_test(a, a, 1000, 1), 1.0);
}

TEST(PermutationTest, LargeConsistentShiftIsSignificant) {
  Rng rng(9);
  std::vector<double> a(20), b(20);
  for (std::size_t i = 0; i < 20; ++i) {
    b[i] = rng.uniform();
    a[i] = b[i] + 0.3 + 0.01 * rng.uniform();
  }
  const double p = permutation_test(a, b, 10000, 4);
  EXPECT_LT(p, 0.01);
  EXPECT_GE(p, 1.0 / 10001.0);
  EXPECT_EQ(p, permutation_test(a, b, 10000, 4));
}

TEST(PermutationTest, RejectsBadInput) {
  EXPECT_THROW(permutation_test({1, 2}, {1}, 1000, 1), ShapeError);
  EXPECT_THROW(permutation_test({1}, {1}, 1000, 1), ShapeError);
  EXPECT_THROW(permutation_test({1, 2}, {1, 2}, 10, 1), ShapeError);
}

}  // namespace
}  // namespace structsum
