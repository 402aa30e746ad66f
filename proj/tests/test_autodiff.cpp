#include <gtest/gtest.h>

#include "cqil/nn_ops.hpp"

#include "oracles.hpp"
#include "testutil.hpp"

using cqil::Rng;
using cqil::Tensor;
using cqil::Var;
using cqil_test::gradcheck;
using cqil_test::random_tensor;

TEST(Conv2d, MatchesCdcOracleAtThetaZero) {
  Rng rng(7);
  for (size_t stride : {1u, 2u}) {
    auto x = Var<double>::constant(random_tensor({2, 3, 8, 8}, rng));
    auto w = Var<double>::constant(random_tensor({4, 3, 3, 3}, rng));
    auto b = Var<double>::constant(random_tensor({4}, rng));
    auto y = cqil::conv2d(x, w, b, stride, 1);
    auto ref = cqil_test::cdc_conv_oracle(x.value(), w.value(), b.value(), 0.0, stride);
    EXPECT_LT(cqil::max_abs_diff(y.value(), ref), 1e-10) << "stride " << stride;
  }
}

TEST(CdcConv, MatchesOracleRandomTheta) {
  Rng rng(11);
  for (size_t stride : {1u, 2u}) {
    auto x = Var<double>::constant(random_tensor({1, 1, 5, 5}, rng));
    auto w = Var<double>::constant(random_tensor({2, 1, 3, 3}, rng));
    auto b = Var<double>::constant(random_tensor({2}, rng));
    auto y = cqil::cdc_conv2d(x, w, b, 0.7, stride);
    auto ref = cqil_test::cdc_conv_oracle(x.value(), w.value(), b.value(), 0.7, stride);
    EXPECT_LT(cqil::max_abs_diff(y.value(), ref), 1e-9) << "stride " << stride;
  }
}

TEST(CdcConv, ThetaOneConstantInputGivesBiasOnly) {
  Rng rng(3);
  auto x = Var<double>::constant(Tensor<double>({1, 2, 6, 6}, 0.37));
  auto w = Var<double>::constant(random_tensor({3, 2, 3, 3}, rng));
  auto b = Var<double>::constant(random_tensor({3}, rng));
  auto y = cqil::cdc_conv2d(x, w, b, 1.0, 1);
  // Interior pixels only: at the borders zero padding breaks the cancellation.
  for (size_t o = 0; o < 3; ++o)
    for (size_t i = 1; i < 5; ++i)
      for (size_t j = 1; j < 5; ++j)
        EXPECT_NEAR(y.value().at4(0, o, i, j), b.value()[o], 1e-12);
}

TEST(CdcConv, ZeroSumKernelIndependentOfTheta) {
  Rng rng(5);
  auto x = random_tensor({1, 2, 6, 6}, rng);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  for (size_t o = 0; o < 3; ++o)
    for (size_t c = 0; c < 2; ++c) {
      double s = 0;
      for (size_t i = 0; i < 9; ++i) s += w.data()[(o * 2 + c) * 9 + i];
      for (size_t i = 0; i < 9; ++i) w.data()[(o * 2 + c) * 9 + i] -= s / 9.0;
    }
  auto b = Var<double>::constant(random_tensor({3}, rng));
  auto y0 = cqil::cdc_conv2d(Var<double>::constant(x), Var<double>::constant(w), b, 0.0, 1);
  auto y1 = cqil::cdc_conv2d(Var<double>::constant(x), Var<double>::constant(w), b, 0.9, 1);
  EXPECT_LT(cqil::max_abs_diff(y0.value(), y1.value()), 1e-12);
}

TEST(Gradients, CdcConvInputAndWeights) {
  Rng rng(13);
  auto x = Var<double>::param(random_tensor({2, 2, 5, 5}, rng));
  auto w = Var<double>::param(random_tensor({3, 2, 3, 3}, rng));
  auto b = Var<double>::param(random_tensor({3}, rng));
  auto build = [&] { return cqil::mean_all(cqil::cdc_conv2d(x, w, b, 0.7, 1)); };
  EXPECT_LT(gradcheck(build, x), 1e-4);
  EXPECT_LT(gradcheck(build, w), 1e-4);
  EXPECT_LT(gradcheck(build, b), 1e-4);
}

TEST(Gradients, CdcConvStride2) {
  Rng rng(17);
  auto x = Var<double>::param(random_tensor({1, 2, 6, 6}, rng));
  auto w = Var<double>::param(random_tensor({2, 2, 3, 3}, rng));
  auto b = Var<double>::param(random_tensor({2}, rng));
  auto build = [&] { return cqil::mean_all(cqil::cdc_conv2d(x, w, b, 0.5, 2)); };
  EXPECT_LT(gradcheck(build, x), 1e-4);
  EXPECT_LT(gradcheck(build, w), 1e-4);
}

TEST(Gradients, Conv2dAllInputs) {
  Rng rng(19);
  auto x = Var<double>::param(random_tensor({2, 3, 6, 6}, rng));
  auto w = Var<double>::param(random_tensor({4, 3, 3, 3}, rng));
  auto b = Var<double>::param(random_tensor({4}, rng));
  auto build = [&] { return cqil::mean_all(cqil::conv2d(x, w, b, 2, 1)); };
  EXPECT_LT(gradcheck(build, x), 1e-4);
  EXPECT_LT(gradcheck(build, w), 1e-4);
  EXPECT_LT(gradcheck(build, b), 1e-4);
}

TEST(Gradients, LinearAndRelu) {
  Rng rng(23);
  auto x = Var<double>::param(random_tensor({4, 6}, rng));
  auto w = Var<double>::param(random_tensor({3, 6}, rng));
  auto b = Var<double>::param(random_tensor({3}, rng));
  auto build = [&] { return cqil::mean_all(cqil::relu(cqil::linear(x, w, b))); };
  EXPECT_LT(gradcheck(build, x), 1e-4);
  EXPECT_LT(gradcheck(build, w), 1e-4);
  EXPECT_LT(gradcheck(build, b), 1e-4);
}

TEST(Gradients, MseLoss) {
  Rng rng(29);
  auto p = Var<double>::param(random_tensor({2, 3, 4, 4}, rng));
  auto t = Var<double>::constant(random_tensor({2, 3, 4, 4}, rng));
  auto build = [&] { return cqil::mse_loss(p, t); };
  EXPECT_LT(gradcheck(build, p), 1e-4);
}

TEST(Gradients, SoftmaxCrossEntropy) {
  Rng rng(31);
  auto logits = Var<double>::param(random_tensor({5, 3}, rng));
  std::vector<int> labels = {0, 2, 1, 1, 0};
  auto build = [&] { return cqil::softmax_cross_entropy(logits, labels); };
  EXPECT_LT(gradcheck(build, logits), 1e-4);
}

TEST(Gradients, GlobalAvgPoolAndConcat) {
  Rng rng(37);
  auto x = Var<double>::param(random_tensor({2, 3, 4, 4}, rng));
  auto f2 = Var<double>::param(random_tensor({2, 5}, rng));
  auto build = [&] {
    auto pooled = cqil::global_avg_pool(x);
    return cqil::mean_all(cqil::concat_features(pooled, f2));
  };
  EXPECT_LT(gradcheck(build, x), 1e-4);
  EXPECT_LT(gradcheck(build, f2), 1e-4);
}

TEST(Gradients, FeatureNorm) {
  Rng rng(43);
  auto x = Var<double>::param(random_tensor({3, 6}, rng));
  auto w = Var<double>::constant(random_tensor({2, 6}, rng));
  auto b = Var<double>::constant(random_tensor({2}, rng));
  auto build = [&] {
    return cqil::mean_all(cqil::linear(cqil::feature_norm(x), w, b));
  };
  EXPECT_LT(gradcheck(build, x), 1e-4);
}

TEST(FeatureNorm, RowsAreStandardised) {
  Rng rng(47);
  auto x = Var<double>::constant(random_tensor({4, 16}, rng, 3.0));
  auto y = cqil::feature_norm(x);
  for (size_t b = 0; b < 4; ++b) {
    double mu = 0, var = 0;
    for (size_t i = 0; i < 16; ++i) mu += y.value().at2(b, i);
    mu /= 16;
    for (size_t i = 0; i < 16; ++i) {
      const double d = y.value().at2(b, i) - mu;
      var += d * d;
    }
    var /= 16;
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(GradientReversal, ForwardIdentityBackwardNegatedScale) {
  Rng rng(41);
  auto x = Var<double>::param(random_tensor({3, 4}, rng));
  for (double lambda : {0.0, 0.5, 1.0, 2.5}) {
    auto y = cqil::gradient_reversal(x, lambda);
    EXPECT_LT(cqil::max_abs_diff(y.value(), x.value()), 0.0 + 1e-15);
    auto loss = cqil::mean_all(y);
    x.zero_grad();
    cqil::backward(loss);
    // Downstream gradient of mean is 1/n everywhere.
    const double expect = -lambda / x.value().numel();
    for (size_t i = 0; i < x.value().numel(); ++i)
      EXPECT_NEAR(x.grad()[i], expect, 1e-12);
  }
}

TEST(Autodiff, GradAccumulatesAcrossSharedSubgraphs) {
  auto x = Var<double>::param(Tensor<double>({2}, 3.0));
  auto y = cqil::add(x, x);  // dy/dx = 2
  auto loss = cqil::mean_all(y);
  cqil::backward(loss);
  EXPECT_NEAR(x.grad()[0], 1.0, 1e-12);  // 2 * (1/2)
}

TEST(Autodiff, DetachBlocksGradient) {
  auto x = Var<double>::param(Tensor<double>({2}, 3.0));
  auto y = cqil::detach(cqil::scale(x, 2.0));
  EXPECT_FALSE(y.requires_grad());
}
