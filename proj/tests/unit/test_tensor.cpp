#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "minmt/ops.hpp"
#include "minmt/tensor.hpp"
#include "op_cases.hpp"

namespace minmt {
namespace {

using testing::kGradFloor;
using testing::random_tensor;

Tensor<double> matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool grad = false) {
  return Tensor<double>({rows, cols}, std::move(values), grad);
}

TEST(Tensor, RejectsZeroExtentAndWrongLength) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor<float>(Shape{2, 3}).size(), 6u);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto eye = matrix(2, 2, {1, 0, 0, 1});
  const auto m = matrix(2, 2, {1, 2, 3, 4});
  const auto out = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandExample) {
  const auto out = matmul(matrix(2, 2, {1, 2, 3, 4}), matrix(2, 2, {5, 6, 7, 8}));
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AssociativeWithinTolerance) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), l = 1 + rng.below(5), n = 1 + rng.below(5);
    const auto a = random_tensor(rng, {m, k});
    const auto b = random_tensor(rng, {k, l});
    const auto c = random_tensor(rng, {l, n});
    const auto left = matmul(matmul(a, b), c);
    const auto right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left[i], right[i], 1e-5);
  }
}

TEST(Softmax, EqualScoresAreUniform) {
  const auto out = softmax(Tensor<double>({2}, {2.0, 2.0}), 0);
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(Softmax, ClosedForm) {
  const auto out = softmax(Tensor<double>({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(out[0], 0.25, 1e-15);
  EXPECT_NEAR(out[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(3);
  const auto x = random_tensor(rng, {3, 5}, -4, 4);
  Tensor<double> shifted = x.clone();
  for (double& v : shifted.mutable_data()) v += 17.25;
  const auto a = softmax(x, 1), b = softmax(shifted, 1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Softmax, SlicesSumToOneAndAreNonNegative) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(6), cols = 1 + rng.below(9);
    const std::size_t axis = rng.below(2);
    Tensor<float> x({rows, cols});
    for (float& v : x.mutable_data()) v = static_cast<float>(rng.uniform(-20, 20));
    const auto y = softmax(x, axis);
    const std::size_t outer = axis == 0 ? cols : rows, n = axis == 0 ? rows : cols;
    for (std::size_t o = 0; o < outer; ++o) {
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const float v = axis == 0 ? y.at(j, o) : y.at(o, j);
        EXPECT_GE(v, 0.0f);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  const auto out = layer_norm(Tensor<double>({1, 4}, 3.5), Tensor<double>({4}, 1.0), Tensor<double>({4}, 0.0));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PopulationVariance) {
  const auto out = layer_norm(Tensor<double>({1, 2}, {1.0, 3.0}), Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0));
  // eps = 1e-5 against a variance of 1.
  EXPECT_NEAR(out[0], -1.0, 1e-5);
  EXPECT_NEAR(out[1], 1.0, 1e-5);
}

TEST(LayerNorm, ZeroGainYieldsBias) {
  Rng rng(8);
  const auto bias = random_tensor(rng, {5});
  const auto out = layer_norm(random_tensor(rng, {3, 5}), Tensor<double>({5}, 0.0), bias);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out.at(r, j), bias[j]);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  for (std::size_t v : {3u, 7u, 50u}) {
    const std::vector<int> targets{0, 2, 2};
    const auto loss = cross_entropy_smoothed(Tensor<double>({3, v}, 0.0), std::span<const int>(targets), 0.0, 1);
    EXPECT_NEAR(loss.item(), std::log(static_cast<double>(v)), 1e-12);
  }
}

TEST(CrossEntropy, ConfidentCorrectPrediction) {
  const std::vector<int> targets{0};
  const auto loss = cross_entropy_smoothed(Tensor<double>({1, 2}, {10.0, -10.0}), std::span<const int>(targets), 0.0, 1);
  EXPECT_NEAR(loss.item(), std::log1p(std::exp(-20.0)), 1e-20);
  EXPECT_NEAR(loss.item(), 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, AllPadIsAnError) {
  const std::vector<int> targets{1, 1};
  try {
    cross_entropy_smoothed(Tensor<double>({2, 4}, 0.0), std::span<const int>(targets), 0.1, 1);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("no non-pad targets"), std::string::npos);
  }
}

TEST(CrossEntropy, TargetOutsideVocabulary) {
  const std::vector<int> targets{4};
  EXPECT_THROW(cross_entropy_smoothed(Tensor<double>({1, 4}, 0.0), std::span<const int>(targets), 0.0, 1),
               std::out_of_range);
}

TEST(CrossEntropy, SmoothedTargetMatchesHandComputation) {
  // V=4, pad=1: mass 0.9 on the gold id, 0.05 on each of the two other non-pad ids.
  const std::vector<double> logits{0.3, -1.0, 2.0, 0.5};
  const std::vector<int> targets{2};
  const auto loss = cross_entropy_smoothed(Tensor<double>({1, 4}, logits), std::span<const int>(targets), 0.1, 1);
  double z = 0;
  for (double l : logits) z += std::exp(l);
  auto logp = [&](int i) { return logits[i] - std::log(z); };
  const double expected = -(0.9 * logp(2) + 0.05 * logp(0) + 0.05 * logp(3));
  EXPECT_NEAR(loss.item(), expected, 1e-12);
}

TEST(Backward, SumGivesOnes) {
  Tensor<double> x({2, 3}, 0.7, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor<double> x({3}, {1.0, 2.0, 3.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor<double> x({3}, {1.0, 2.0, 3.0}, true);
  const auto loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, 8, 12}));
  x.zero_grad();
  sum(x).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, NonScalarLossIsAnError) {
  Tensor<double> x({2}, 1.0, true);
  EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(Backward, TwoConsumersSumContributions) {
  // loss = sum(x*x) + sum(x): grad = 2x + 1.
  Tensor<double> x({3}, {0.5, -1.0, 2.0}, true);
  add(sum(mul(x, x)), sum(x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2.0, -1.0, 5.0}));
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor<double> x({2}, 1.0, true);
  NoGradGuard guard;
  const auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteChecks, OverflowRaisesNumericError) {
  ASSERT_TRUE(finite_checks_enabled());
  Tensor<float> x({2}, std::numeric_limits<float>::max());
  EXPECT_THROW(scale(x, 10.0f), NumericError);
  set_finite_checks(false);
  EXPECT_NO_THROW(scale(x, 10.0f));
  set_finite_checks(true);
}

// Randomized finite-difference checks for every op, 100 seeded trials each.
class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto cases = testing::op_cases();
  const auto& c = cases[GetParam()];
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto result = c.run(seed);
    ASSERT_LT(result.f64.max_relative_error, 1e-5) << c.name << " seed " << seed << " at " << result.f64.worst;
    ASSERT_LT(result.f32.max_relative_error, 1e-3) << c.name << " seed " << seed << " at " << result.f32.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, testing::op_cases().size()),
                         [](const auto& info) { return testing::op_cases()[info.param].name; });

}  // namespace
}  // namespace minmt
