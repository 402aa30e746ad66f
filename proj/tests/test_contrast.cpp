#include <gtest/gtest.h>

#include "cqil/contrast.hpp"

#include "testutil.hpp"

using cqil::Rng;
using cqil::Tensor;
using cqil::Var;
using cqil_test::random_tensor;

namespace {
Tensor<double> vec2(double a, double b) {
  Tensor<double> t({2});
  t[0] = a;
  t[1] = b;
  return t;
}
}  // namespace

TEST(ContrastiveTerm, CanonicalValues) {
  EXPECT_NEAR(cqil::contrastive_term(vec2(1, 0), vec2(1, 0)), 0.0, 1e-12);
  EXPECT_NEAR(cqil::contrastive_term(vec2(1, 0), vec2(-1, 0)), 4.0, 1e-12);
  EXPECT_NEAR(cqil::contrastive_term(vec2(1, 0), vec2(0, 1)), 2.0, 1e-12);
}

TEST(ContrastiveTerm, MatchesDirectFormulaOnRandomVectors) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> q = random_tensor({8}, rng);
    Tensor<double> z = random_tensor({8}, rng);
    double qq = 0, zz = 0, qz = 0;
    for (size_t i = 0; i < 8; ++i) {
      qq += q[i] * q[i];
      zz += z[i] * z[i];
      qz += q[i] * z[i];
    }
    const double expect = 2.0 - 2.0 * qz / (std::sqrt(qq) * std::sqrt(zz));
    EXPECT_NEAR(cqil::contrastive_term(q, z), expect, 1e-9);
  }
}

TEST(ContrastiveTerm, ScaleInvariance) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> q = random_tensor({6}, rng);
    Tensor<double> z = random_tensor({6}, rng);
    const double base = cqil::contrastive_term(q, z);
    const double a = 0.1 + 5.0 * rng.uniform(), b = 0.1 + 5.0 * rng.uniform();
    Tensor<double> qa = q * a, zb = z * b;
    EXPECT_NEAR(cqil::contrastive_term(qa, zb), base, 1e-9);
  }
}

TEST(ContrastiveTerm, BoundsOverThousandPairs) {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor<double> q = random_tensor({16}, rng);
    Tensor<double> z = random_tensor({16}, rng);
    const double v = cqil::contrastive_term(q, z);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 4.0);
  }
}

TEST(ContrastiveTerm, RejectsZeroNorm) {
  Tensor<double> z({3});
  Tensor<double> q({3});
  q[0] = 1;
  EXPECT_THROW(cqil::contrastive_term(q, z), cqil::Error);
}

TEST(ContrastiveTerm, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto q = Var<double>::param(random_tensor({3, 8}, rng));
  Tensor<double> z = random_tensor({3, 8}, rng);
  auto build = [&] { return cqil::mean_all(cqil::contrastive_terms(q, z)); };
  EXPECT_LT(cqil_test::gradcheck(build, q), 1e-4);
}

TEST(Ema, EndpointsAndMidpoint) {
  auto make = [](double v) {
    std::vector<Var<double>> p;
    p.push_back(Var<double>::param(Tensor<double>({4}, v)));
    return p;
  };
  auto xi = make(0.0);
  auto theta = make(2.0);
  cqil::ema_update(xi, theta, 0.5);
  EXPECT_DOUBLE_EQ(xi[0].value()[0], 1.0);
  xi = make(3.0);
  cqil::ema_update(xi, theta, 1.0);
  EXPECT_DOUBLE_EQ(xi[0].value()[0], 3.0);
  xi = make(3.0);
  cqil::ema_update(xi, theta, 0.0);
  EXPECT_DOUBLE_EQ(xi[0].value()[0], 2.0);
}

TEST(Ema, GeometricContraction) {
  Rng rng(13);
  std::vector<Var<double>> xi, theta;
  xi.push_back(Var<double>::param(random_tensor({32}, rng)));
  theta.push_back(Var<double>::param(random_tensor({32}, rng)));
  const double tau = 0.9;
  Tensor<double> diff0 = xi[0].value() - theta[0].value();
  const double d0 = cqil::l2_norm(diff0);
  for (int k = 1; k <= 5; ++k) {
    cqil::ema_update(xi, theta, tau);
    Tensor<double> diff = xi[0].value() - theta[0].value();
    EXPECT_NEAR(cqil::l2_norm(diff), std::pow(tau, k) * d0, 1e-9);
  }
}

TEST(SymmetrizedLoss, BoundsAndStopGradient) {
  Rng rng(17);
  cqil::OnlineNetwork<double> online(4, 16, 8, rng);
  cqil::TargetNetwork<double> target(4, 16, 8, rng);
  cqil::ParamList<double> tgt_params;
  target.collect("target", tgt_params);
  cqil::set_requires_grad(tgt_params, false);

  cqil::QualityPair<double> pair;
  pair.enhanced = random_tensor({3, 64, 64}, rng, 0.25);
  for (size_t i = 0; i < pair.enhanced.numel(); ++i)
    pair.enhanced[i] = std::abs(pair.enhanced[i]);
  pair.original = pair.enhanced;
  for (size_t i = 0; i < pair.original.numel(); ++i)
    pair.original[i] = std::min(1.0, pair.original[i] + 0.05 * rng.uniform());

  Var<double> loss = cqil::symmetrized_loss(pair, online, target);
  EXPECT_GE(loss.value()[0], 0.0);
  EXPECT_LE(loss.value()[0], 8.0);

  // No gradient may reach the target parameters.
  cqil::backward(loss);
  for (auto& p : tgt_params) {
    EXPECT_FALSE(p.var.node()->grad_alloc);
    const Tensor<double>& g = p.var.grad();  // allocates zeros
    for (size_t i = 0; i < g.numel(); ++i) ASSERT_EQ(g[i], 0.0);
  }
  // While the online parameters do receive one.
  cqil::ParamList<double> onl;
  online.collect("online", onl);
  double total = 0;
  for (auto& p : onl)
    if (p.var.node()->grad_alloc) total += cqil::l2_norm(p.var.grad());
  EXPECT_GT(total, 0.0);
}

TEST(SymmetrizedLoss, AlignedVectorsGiveZero) {
  // Both directions of the pair term vanish when prediction equals target
  // projection; checked at the vector level where alignment is constructible.
  Tensor<double> v({4});
  for (size_t i = 0; i < 4; ++i) v[i] = 0.3 + static_cast<double>(i);
  EXPECT_NEAR(cqil::contrastive_term(v, v) + cqil::contrastive_term(v, v), 0.0, 1e-12);
}
