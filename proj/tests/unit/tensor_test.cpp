#include <gtest/gtest.h>

#include <cmath>

#include "structsum/gradcheck.hpp"
#include "structsum/gradcheck_suite.hpp"
#include "structsum/optim.hpp"
#include "structsum/tensor.hpp"

namespace structsum {
namespace {

// Plain triple loop over row-major [n, k] x [k, m].
std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t n, std::size_t k,
                                 std::size_t m) {
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * m + j] += a[i * k + t] * b[t * m + j];
  return out;
}

TEST(Tensor, FromRejectsWrongLength) { EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError); }

TEST(Tensor, AtIndexesRowMajor) {
  Tensor t = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
}

TEST(Tensor, BroadcastAddMatchesExplicitExpansion) {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from({3}, {10, 20, 30});
  Tensor col = Tensor::from({2, 1}, {100, 200});
  const Tensor s1 = add(a, row), s2 = add(a, col);
  auto r1 = s1.data();
  auto r2 = s2.data();
  const std::vector<double> want1{11, 22, 33, 14, 25, 36}, want2{101, 102, 103, 204, 205, 206};
  EXPECT_EQ(std::vector<double>(r1.begin(), r1.end()), want1);
  EXPECT_EQ(std::vector<double>(r2.begin(), r2.end()), want2);
  EXPECT_EQ(add(col, row).shape(), (Shape{2, 3}));
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
}

TEST(Tensor, MatmulMatchesNaiveLoop) {
  Rng rng(1);
  for (auto [n, k, m] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 4, 5}, {7, 2, 3}, {4, 9, 1}}) {
    Tensor a = Tensor::randn({n, k}, rng), b = Tensor::randn({k, m}, rng);
    const auto want = naive_matmul(a.data(), b.data(), n, k, m);
    const Tensor c = matmul(a, b);
    auto got = c.data();
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Tensor, BatchedMatmulBroadcastsBatchDims) {
  Rng rng(2);
  Tensor a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({4, 5}, rng);
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t batch = 0; batch < 2; ++batch) {
    const auto want = naive_matmul(a.data().subspan(batch * 12, 12), b.data(), 3, 4, 5);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(c.data()[batch * 15 + i], want[i], 1e-12);
  }
}

TEST(Tensor, MatmulInnerMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST(Tensor, SoftmaxReferenceValues) {
  Tensor p = softmax(Tensor::from({3}, {1, 2, 3}));
  EXPECT_NEAR(p.data()[0], 0.09003057, 1e-8);
  EXPECT_NEAR(p.data()[1], 0.24472847, 1e-8);
  EXPECT_NEAR(p.data()[2], 0.66524096, 1e-8);
}

TEST(Tensor, SoftmaxIsShiftInvariantAndStable) {
  Tensor p = softmax(Tensor::from({3}, {1001, 1002, 1003}));
  EXPECT_NEAR(p.data()[0], 0.09003057, 1e-8);
}

TEST(Tensor, MaskedSoftmaxZerosMaskedEntriesExactly) {
  const Mask m{{1, 3}, {1, 0, 1}};
  Tensor p = softmax(Tensor::from({2, 3}, {1, 5, 2, 0, 0, 0}), -1, &m);
  EXPECT_EQ(p.data()[1], 0.0);
  EXPECT_EQ(p.data()[4], 0.0);
  EXPECT_NEAR(p.data()[0] + p.data()[2], 1.0, 1e-15);
  EXPECT_NEAR(p.data()[3], 0.5, 1e-15);
}

TEST(Tensor, FullyMaskedSliceThrows) {
  const Mask m{{1, 2}, {0, 0}};
  EXPECT_THROW(softmax(Tensor::zeros({1, 2}), -1, &m), NumericError);
}

TEST(Tensor, LogSoftmaxMatchesLogOfSoftmax) {
  Rng rng(3);
  Tensor x = Tensor::randn({3, 5}, rng);
  const Tensor ls = log_softmax(x), sm = softmax(x);
  auto a = ls.data();
  auto b = sm.data();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], std::log(b[i]), 1e-12);
}

TEST(Tensor, SegmentSoftmaxNormalizesEachSegmentPerColumn) {
  Tensor s = Tensor::from({4, 2}, {1, 0, 2, 0, 3, 5, 0, 1});
  Tensor p = segment_softmax(s, {0, 0, 1, 0}, 2);
  // Segment 0 holds rows 0, 1, 3.
  const double z0 = std::exp(1) + std::exp(2) + std::exp(0);
  EXPECT_NEAR(p.at({0, 0}), std::exp(1) / z0, 1e-12);
  EXPECT_NEAR(p.at({3, 0}), 1 / z0, 1e-12);
  EXPECT_NEAR(p.at({2, 0}), 1.0, 1e-15);
  EXPECT_NEAR(p.at({2, 1}), 1.0, 1e-15);
  EXPECT_NEAR(p.at({0, 1}) + p.at({1, 1}) + p.at({3, 1}), 1.0, 1e-12);
}

TEST(Tensor, LayerNormReference) {
  Tensor y = layer_norm(Tensor::from({1, 4}, {1, 2, 3, 4}), Tensor::full({4}, 1.0), Tensor::zeros({4}));
  const double sd = std::sqrt(1.25 + 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], (static_cast<double>(i + 1) - 2.5) / sd, 1e-12);
}

TEST(Tensor, ActivationReferenceValues) {
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), 0.8411919906082768, 1e-12);
  EXPECT_NEAR(elu(Tensor::scalar(-1.0)).item(), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(leaky_relu(Tensor::scalar(-2.0), 0.2).item(), -0.4, 1e-15);
  EXPECT_EQ(relu(Tensor::scalar(-2.0)).item(), 0.0);
}

TEST(Tensor, GatherAndScatterAreAdjoint) {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = gather_rows(x, {2, 0, 2});
  EXPECT_EQ(g.at({0, 1}), 6.0);
  EXPECT_EQ(g.at({1, 0}), 1.0);
  Tensor s = scatter_add_rows(g, {0, 1, 0}, 2);
  EXPECT_EQ(s.at({0, 0}), 10.0);
  EXPECT_EQ(s.at({1, 1}), 2.0);
  EXPECT_THROW(gather_rows(x, {3}), ShapeError);
}

TEST(Tensor, DropoutIsIdentityInEvalAndScaledInTrain) {
  Rng rng(4);
  Tensor x = Tensor::full({1000}, 1.0);
  EXPECT_EQ(dropout(x, 0.5, rng, false).data()[0], 1.0);
  Tensor y = dropout(x, 0.25, rng, true);
  std::size_t kept = 0;
  for (double v : y.data()) {
    ASSERT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    kept += v != 0.0;
  }
  EXPECT_GT(kept, 650u);
  EXPECT_LT(kept, 850u);
}

TEST(Autodiff, SquareGradient) {
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], -4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::from({1}, {3}, true);
  sum(scale(x, 2.0)).backward();
  sum(scale(x, 2.0)).backward();
  EXPECT_EQ(x.grad()[0], 4.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, SharedSubexpressionSumsBothPaths) {
  Tensor x = Tensor::from({1}, {2}, true);
  Tensor y = mul(x, x);
  sum(add(y, scale(y, 3.0))).backward();  // 4 x^2
  EXPECT_EQ(x.grad()[0], 16.0);
}

TEST(Autodiff, BroadcastGradientReducesOverExpandedAxes) {
  Tensor a = Tensor::zeros({2, 3}, true);
  Tensor b = Tensor::from({3}, {1, 2, 3}, true);
  sum(add(a, b)).backward();
  for (double g : b.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Autodiff, NoGradGuardSkipsTape) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Autodiff, BackwardRequiresScalar) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(Autodiff, EveryOpPassesFiniteDifferenceCheck) {
  for (const auto& r : op_grad_checks(11)) {
    EXPECT_LT(r.error, 1e-6) << r.name;
  }
}

TEST(Autodiff, EveryOpPassesWithAnotherSeed) {
  for (const auto& r : op_grad_checks(29)) {
    EXPECT_LT(r.error, 1e-6) << r.name;
  }
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
}

TEST(Adam, OneStepHandEvaluation) {
  // p = 1, g = 0.5, lr = 0.1: m = 0.05, v = 2.5e-4, m_hat = 0.5, v_hat = 0.25,
  // update = 0.1 * 0.5 / (0.5 + 1e-8).
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  params[0].mutable_grad()[0] = 0.5;
  AdamState st;
  st.lr = 0.1;
  adam_step(params, st);
  EXPECT_NEAR(params[0].data()[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(st.m[0][0], 0.05, 1e-15);
  EXPECT_NEAR(st.v[0][0], 2.5e-4, 1e-18);
  // A second identical gradient keeps the bias-corrected ratio at 1.
  adam_step(params, st);
  EXPECT_NEAR(params[0].data()[0], 1.0 - 2 * 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
}

TEST(Adam, ZeroLearningRateLeavesValuesButAdvancesMoments) {
  std::vector<Tensor> params{Tensor::from({2}, {1.0, 2.0}, true)};
  params[0].mutable_grad()[0] = 1.0;
  AdamState st;
  st.lr = 0.0;
  adam_step(params, st);
  EXPECT_EQ(params[0].data()[0], 1.0);
  EXPECT_EQ(st.step, 1);
  EXPECT_NEAR(st.m[0][0], 0.1, 1e-15);
}

TEST(Adam, MissingGradientThrows) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0}, true)};
  AdamState st;
  EXPECT_THROW(adam_step(params, st), ShapeError);
}

TEST(Optim, ClipGradNormRescalesJointly) {
  std::vector<Tensor> params{Tensor::from({1}, {0.0}, true), Tensor::from({1}, {0.0}, true)};
  params[0].mutable_grad()[0] = 3.0;
  params[1].mutable_grad()[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(params[0].grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(params[1].grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(params, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(params[1].grad()[0], 0.8, 1e-15);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

}  // namespace
}  // namespace structsum
