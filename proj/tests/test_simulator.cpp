#include "exportnet/parallel.hpp"
#include "exportnet/simulator.hpp"
#include "exportnet/synthetic.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <vector>

using namespace exportnet;

namespace {

struct Fixture {
  Vector z;
  Matrix C;
  CouplingNetwork net;
  CorrelationFactor factor;
  Vector initial;
};

Fixture small_fixture(double G, Index N = 8) {
  Fixture f;
  f.z = pareto_weights(N, 1.2);
  f.C = make_factor_correlation(N, 2, 1.0, 17);
  f.net = build_coupling(f.z, f.C, G);
  f.factor = factor_correlation(f.C);
  RandomStream rng(5);
  f.initial = make_initial_condition(f.z, 0.5, 1.0, 1000.0, rng);
  return f;
}

double variance_law(double n, double sigma, double tau) {
  return 2.0 * sigma * sigma * (n + tau * (std::exp(-n / tau) - 1.0));
}

}  // namespace

TEST(Drift, InflationSteps) {
  const auto p = reference_params(reference_inflation());
  // 1974 is the interval (11, 12] after the 1962 base year
  EXPECT_NEAR(drift_rate(11.5, p), 0.151, 1e-15);
  EXPECT_NEAR(drift_rate(12.0, p), 0.151, 1e-15);
  EXPECT_NEAR(drift_rate(60.0, p), 0.041 + 0.0473, 5e-5);
  ModelParams flat = p;
  flat.inflation = InflationSchedule::zero(38);
  EXPECT_EQ(drift_rate(3.3, flat), 0.041);
  EXPECT_EQ(drift_rate(100.0, flat), 0.041);
}

TEST(Step, HandArithmeticTwoNodes) {
  Vector z(2);
  z << 0.7, 0.3;
  Matrix C(2, 2);
  C << 1, -0.5, -0.5, 1;
  const auto net = build_coupling(z, C, 1.0);
  ModelParams p{1.0, 0.0, 1.0, 0.02, InflationSchedule::zero(1)};
  NoiseState noise;
  noise.eta = Vector(2);
  noise.eta << 0.1, -0.2;
  Vector Z(2);
  Z << 2.0, 5.0;
  const double dt = 0.01;
  // A Z = (0.35*5 - 0.15*2, 0.15*2 - 0.35*5) = (1.45, -1.45)
  const Vector euler = step(Z, noise, net, 0.0, dt, p, Scheme::kEuler);
  EXPECT_NEAR(euler[0], 2.0 + dt * (1.45 + 0.12 * 2.0), 1e-15);
  EXPECT_NEAR(euler[1], 5.0 + dt * (-1.45 - 0.18 * 5.0), 1e-15);
  const Vector expo = step(Z, noise, net, 0.0, dt, p, Scheme::kExponentialEuler);
  EXPECT_NEAR(expo[0], (2.0 + dt * 1.45) * std::exp(dt * 0.12), 1e-15);
  EXPECT_NEAR(expo[1], (5.0 - dt * 1.45) * std::exp(-dt * 0.18), 1e-15);
}

TEST(Step, PositivityGuard) {
  Vector z(2);
  z << 0.5, 0.5;
  Matrix C = Matrix::Ones(2, 2);
  const auto net = build_coupling(z, C, 300.0);
  ModelParams p{300.0, 0.0, 1.0, 0.0, {}};
  Vector Z(2);
  Z << 1e-6, 1.0;
  NoiseState noise;
  noise.eta = Vector::Zero(2);
  StepWorkspace ws;
  for (auto scheme : {Scheme::kEuler, Scheme::kExponentialEuler}) {
    Vector next = Z;
    const auto guarded = advance_values(next, noise.eta, net, 0.0, 0.01, p, scheme, ws);
    EXPECT_EQ(guarded, 1u);
    EXPECT_GT(next.minCoeff(), 0.0);
    EXPECT_NEAR(next[1], std::exp(0.01 * (150e-6 - 150.0)), 1e-15);
  }
}

TEST(Step, BlowupReportsTimeAndProduct) {
  const auto f = small_fixture(0.0, 3);
  ModelParams p{0.0, 0.0, 1.0, 1e10, {}};
  NoiseState noise;
  noise.eta = Vector::Zero(3);
  try {
    step(f.initial, noise, f.net, 2.0, 0.01, p);
    FAIL() << "expected NumericalBlowupError";
  } catch (const NumericalBlowupError& e) {
    EXPECT_DOUBLE_EQ(e.time(), 2.01);
    EXPECT_EQ(e.product(), 0);
  }
}

TEST(Simulate, DecoupledDeterministicGrowth) {
  const auto f = small_fixture(0.0);
  ModelParams p{0.0, 0.0, 0.8, 0.041, InflationSchedule::zero(38)};
  SimulationOptions opt;
  const auto traj = simulate(f.initial, f.net, f.factor, p, opt, 1);
  ASSERT_EQ(traj.samples(), 39);
  const Vector expect = f.initial * std::exp(0.041 * 38);
  EXPECT_LT(((traj.states.col(38) - expect).array() / expect.array()).abs().maxCoeff(), 1e-6);
}

TEST(Simulate, InflationQuadrature) {
  const auto f = small_fixture(0.0);
  ModelParams p{0.0, 0.0, 0.8, 0.041, reference_inflation()};
  const auto traj = simulate(f.initial, f.net, f.factor, p, {}, 1);
  const double expect = 38 * 0.041 + reference_inflation().rates.sum();
  for (Index i = 0; i < f.initial.size(); ++i) {
    const double got = std::log(traj.states(i, 38) / traj.states(i, 0));
    EXPECT_NEAR(got, expect, 1e-6 * expect);
  }
}

TEST(Simulate, KernelFixedPoint) {
  const auto f = small_fixture(0.5);
  ModelParams p{0.5, 0.0, 0.8, 0.0, {}};
  SimulationOptions opt;
  opt.horizon = 100;
  const Vector start = 1234.5 * f.z;
  const auto traj = simulate(start, f.net, f.factor, p, opt, 1);
  for (Index k = 0; k < traj.samples(); ++k)
    EXPECT_LT(((traj.states.col(k) - start).array() / start.array()).abs().maxCoeff(), 1e-9);
}

TEST(Simulate, DeterministicGivenSeed) {
  const auto f = small_fixture(0.051);
  const auto p = reference_params(reference_inflation());
  const auto a = simulate(f.initial, f.net, f.factor, p, {}, 99);
  const auto b = simulate(f.initial, f.net, f.factor, p, {}, 99);
  const auto c = simulate(f.initial, f.net, f.factor, p, {}, 100);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.times, b.times);
  EXPECT_NE(a.states, c.states);
  EXPECT_EQ(a.seed, 99u);
  EXPECT_EQ(a.params.coupling, 0.051);
}

TEST(Simulate, MonetaryUnitScaling) {
  const auto f = small_fixture(0.051);
  const auto p = reference_params(reference_inflation());
  const auto a = simulate(f.initial, f.net, f.factor, p, {}, 7);
  const auto b = simulate(1e3 * f.initial, f.net, f.factor, p, {}, 7);
  const Matrix ratio = b.states.array() / a.states.array();
  EXPECT_LT((ratio.array() - 1e3).abs().maxCoeff(), 1e3 * 1e-12);
}

TEST(Simulate, SamplingGrid) {
  const auto f = small_fixture(0.051, 4);
  const auto p = reference_params();
  SimulationOptions opt;
  opt.horizon = 5;
  opt.sample_interval = 2;
  const auto traj = simulate(f.initial, f.net, f.factor, p, opt, 1);
  EXPECT_EQ(traj.times, (std::vector<double>{0, 2, 4, 5}));
  EXPECT_EQ(traj.index_of(4.0), 2);
  EXPECT_EQ(traj.index_of(3.0), -1);
  EXPECT_THROW(to_panel(traj, default_product_ids(4), 2000), ArgumentError);

  opt.full_resolution = true;
  opt.horizon = 0.1;
  const auto fine = simulate(f.initial, f.net, f.factor, p, opt, 1);
  EXPECT_EQ(fine.samples(), 11);

  opt.full_resolution = false;
  opt.horizon = 3;
  opt.sample_interval = 1;
  const auto panel = to_panel(simulate(f.initial, f.net, f.factor, p, opt, 1), default_product_ids(4), 1990);
  EXPECT_EQ(panel.years(), 4);
  EXPECT_EQ(panel.product_ids[3], "P003");
  EXPECT_NO_THROW(panel.validate());
}

TEST(Simulate, WarningsAndErrors) {
  const auto f = small_fixture(0.051, 4);
  auto p = reference_params();
  SimulationOptions opt;
  opt.horizon = 2;
  opt.dt = 0.1;
  EXPECT_EQ(simulate(f.initial, f.net, f.factor, p, opt, 1).warnings.size(), 1u);
  opt.dt = 0.01;
  EXPECT_TRUE(simulate(f.initial, f.net, f.factor, p, opt, 1).warnings.empty());

  Vector bad = f.initial;
  bad[1] = 0.0;
  EXPECT_THROW(simulate(bad, f.net, f.factor, p, opt, 1), ArgumentError);
  EXPECT_THROW(simulate(f.initial.head(3), f.net, f.factor, p, opt, 1), DimensionError);
  opt.horizon = 1.005;
  EXPECT_THROW(simulate(f.initial, f.net, f.factor, p, opt, 1), ArgumentError);
  opt.horizon = 1;
  p.tau = 0.0;
  EXPECT_THROW(simulate(f.initial, f.net, f.factor, p, opt, 1), ArgumentError);
}

TEST(Simulate, HalvingDtDeterministicPart) {
  const auto f = small_fixture(0.051);
  auto p = reference_params(reference_inflation());
  p.sigma = 0.0;
  SimulationOptions coarse, fine;
  fine.dt = 0.005;
  const auto a = simulate(f.initial, f.net, f.factor, p, coarse, 1);
  const auto b = simulate(f.initial, f.net, f.factor, p, fine, 1);
  const Vector diff = (a.states.col(38).array().log() - b.states.col(38).array().log()).matrix();
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Simulate, LogVarianceLaw) {
  // single product, G = 0: var ln Z(n) follows the integrated OU variance
  Vector one(1);
  one << 1.0;
  const auto net = build_coupling(one, Matrix::Identity(1, 1), 0.0);
  const auto factor = factor_correlation(Matrix::Identity(1, 1));
  ModelParams p{0.0, 0.098, 0.8, 0.041, {}};
  const int paths = 10000;
  const std::vector<int> checks = {1, 5, 38};
  std::vector<std::vector<double>> logs(checks.size(), std::vector<double>(paths));
  parallel_for(paths, [&](std::size_t r) {
    const auto traj = simulate(one, net, factor, p, {}, derive_seed(123, r));
    for (std::size_t c = 0; c < checks.size(); ++c) logs[c][r] = std::log(traj.states(0, checks[c]));
  });
  for (std::size_t c = 0; c < checks.size(); ++c) {
    double m = 0, v = 0;
    for (double x : logs[c]) m += x;
    m /= paths;
    for (double x : logs[c]) v += (x - m) * (x - m);
    v /= paths - 1;
    const double expect = variance_law(checks[c], p.sigma, p.tau);
    EXPECT_NEAR(v, expect, 0.03 * expect) << "n=" << checks[c];
  }
}

TEST(Parallel, OrderIndependentAndRethrows) {
  std::vector<double> out(1000);
  set_thread_limit(4);
  parallel_for(out.size(), [&](std::size_t i) { out[i] = std::sqrt(double(i)); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], std::sqrt(double(i)));
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) throw ArgumentError("boom");
               }),
               ArgumentError);
  set_thread_limit(0);
}
