#include "exportnet/synthetic.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace exportnet;

TEST(FactorCorrelation, ZeroFactorsIsIdentity) {
  EXPECT_EQ(make_factor_correlation(7, 0, 1.0, 1), Matrix::Identity(7, 7));
}

TEST(FactorCorrelation, ValidCorrelationMatrix) {
  for (Index k : {1, 3, 10}) {
    const Matrix C = make_factor_correlation(50, k, 1.0, 2);
    EXPECT_EQ((C - C.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(C.diagonal(), Vector::Ones(50));
    EXPECT_LE(C.cwiseAbs().maxCoeff(), 1.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0) << k;
  }
  EXPECT_THROW(make_factor_correlation(5, 5, 1.0, 1), ArgumentError);
}

TEST(FactorCorrelation, LoadingsScaleStrengthensCoupling) {
  auto mean_abs = [](const Matrix& C) { return (C.cwiseAbs().sum() - C.rows()) / (C.rows() * (C.rows() - 1.0)); };
  EXPECT_LT(mean_abs(make_factor_correlation(60, 3, 0.3, 4)), mean_abs(make_factor_correlation(60, 3, 3.0, 4)));
}

TEST(ParetoWeights, NormalizedAndDecreasing) {
  const Vector z = pareto_weights(219, 1.5);
  EXPECT_NEAR(z.sum(), 1.0, 1e-14);
  for (Index i = 1; i < z.size(); ++i) EXPECT_LT(z[i], z[i - 1]);
  // quantile ratio between the first two products
  EXPECT_NEAR(z[0] / z[1], std::pow(3.0, 1.0 / 1.5), 1e-12);
  EXPECT_THROW(pareto_weights(5, 0.0), ArgumentError);
}

TEST(InitialCondition, TotalAndRecipe) {
  const Vector z = pareto_weights(30, 1.5);
  RandomStream rng(1);
  const Vector plain = make_initial_condition(z, 0.0, 1.0, 1e5, rng);
  EXPECT_LT((plain - 1e5 * z).cwiseAbs().maxCoeff(), 1e-9);
  RandomStream rng2(1);
  const Vector flat = make_initial_condition(z, 0.0, 0.0, 300.0, rng2);
  EXPECT_LT((flat.array() - 10.0).abs().maxCoeff(), 1e-12);
}

TEST(InitialCondition, EmergingProducts) {
  const Vector z = Vector::Constant(1000, 1e-3);
  RandomStream rng(2);
  const Vector v = make_initial_condition(z, 0.0, 1.0, 1.0, rng, 0.5, 100.0);
  const double top = v.maxCoeff();
  int lowered = 0;
  for (Index i = 0; i < v.size(); ++i) {
    const double ratio = top / v[i];
    EXPECT_GE(ratio, 1.0 - 1e-12);
    EXPECT_LE(ratio, 100.0 + 1e-9);
    if (ratio > 1.0 + 1e-12) ++lowered;
  }
  EXPECT_NEAR(lowered, 500, 60);
  EXPECT_NEAR(v.sum(), 1.0, 1e-12);
  EXPECT_THROW(make_initial_condition(z, 0.0, 1.0, 1.0, rng, 1.5, 10.0), ArgumentError);
  EXPECT_THROW(make_initial_condition(z, 0.0, 1.0, 1.0, rng, 0.5, 0.5), ArgumentError);
}

TEST(Generate, NoiselessDecoupledColumnsAreExponential) {
  SyntheticSpec spec;
  spec.products = 12;
  spec.years = 10;
  spec.params = ModelParams{0.0, 0.0, 0.8, 0.041, {}};
  const auto syn = generate_panel(spec);
  EXPECT_NO_THROW(syn.panel.validate());
  for (Index n = 0; n < 10; ++n) {
    const Vector expect = syn.initial * std::exp(0.041 * n);
    EXPECT_LT(((syn.panel.values.col(n) - expect).array() / expect.array()).abs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(syn.panel.base_year, 1962);
}

TEST(Generate, DefaultShapeAndDeterminism) {
  SyntheticSpec spec;
  spec.seed = 5;
  const auto a = generate_panel(spec);
  EXPECT_EQ(a.panel.products(), 219);
  EXPECT_EQ(a.panel.years(), 39);
  EXPECT_EQ(a.panel.last_year(), 2000);
  EXPECT_NO_THROW(a.panel.validate());
  EXPECT_EQ(a.truth.coupling, 0.051);
  const auto b = generate_panel(spec);
  EXPECT_EQ(a.panel.values, b.panel.values);
  spec.seed = 6;
  EXPECT_NE(generate_panel(spec).panel.values, a.panel.values);
}

TEST(Generate, TargetsOverrideRecipes) {
  SyntheticSpec spec;
  spec.products = 3;
  spec.years = 4;
  spec.z_target = Vector::Constant(3, 1.0 / 3.0);
  spec.correlation_target = Matrix::Identity(3, 3);
  spec.initial = Vector::Constant(3, 2.0);
  const auto syn = resolve_synthetic(spec);
  EXPECT_EQ(syn.z, *spec.z_target);
  EXPECT_EQ(syn.correlation, *spec.correlation_target);
  EXPECT_EQ(syn.initial, *spec.initial);
  spec.initial = Vector::Constant(2, 2.0);
  EXPECT_THROW(resolve_synthetic(spec), DimensionError);
  spec.products = 1;
  EXPECT_THROW(resolve_synthetic(spec), DimensionError);
}
