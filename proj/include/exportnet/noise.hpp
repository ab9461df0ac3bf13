#pragma once

#include "exportnet/core.hpp"
#include "exportnet/params.hpp"
#include "exportnet/random.hpp"

#include <cmath>
#include <vector>

namespace exportnet {

/// C = L diag(D) L^T with L unit lower-triangular. Pivots below the clamp
/// threshold are set to zero; their columns of L are zeroed as well.
struct CorrelationFactor {
  Matrix lower;
  Vector diag;
  Index clamp_count = 0;
  /// Nonzero columns of L diag(D)^{1/2}, packed. Used for sampling.
  Matrix scaled_columns;
  std::vector<Index> active;

  Index size() const noexcept { return lower.rows(); }
  Matrix reconstruct() const { return lower * diag.asDiagonal() * lower.transpose(); }
};

inline constexpr double kPivotClamp = 1e-10;

/// Unpivoted LDL^T. Deterministic; handles the rank deficiency of a
/// correlation matrix estimated from fewer samples than products.
inline CorrelationFactor factor_correlation(const Matrix& C, double clamp = kPivotClamp) {
  const Index N = C.rows();
  if (C.cols() != N) throw DimensionError("correlation matrix must be square");
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ArgumentError("correlation matrix is not symmetric");

  CorrelationFactor f;
  f.lower = Matrix::Identity(N, N);
  f.diag = Vector::Zero(N);
  // Column-oriented update; work holds L(:, k) * D(k).
  Matrix work = Matrix::Zero(N, N);
  for (Index j = 0; j < N; ++j) {
    double d = C(j, j);
    for (Index k = 0; k < j; ++k) d -= f.lower(j, k) * work(j, k);
    if (d < clamp) {
      f.diag[j] = 0.0;
      ++f.clamp_count;
      continue;
    }
    f.diag[j] = d;
    for (Index i = j + 1; i < N; ++i) {
      double s = C(i, j);
      for (Index k = 0; k < j; ++k) s -= f.lower(i, k) * work(j, k);
      f.lower(i, j) = s / d;
    }
    work.col(j) = f.lower.col(j) * d;
  }

  for (Index j = 0; j < N; ++j)
    if (f.diag[j] > 0.0) f.active.push_back(j);
  f.scaled_columns.resize(N, static_cast<Index>(f.active.size()));
  for (std::size_t a = 0; a < f.active.size(); ++a)
    f.scaled_columns.col(static_cast<Index>(a)) = f.lower.col(f.active[a]) * std::sqrt(f.diag[f.active[a]]);
  return f;
}

/// Writes xi = L D^{1/2} xi_tilde into `out`. Clamped modes multiply a zero
/// pivot, so only the active ones draw a variate.
inline void sample_correlated(const CorrelationFactor& factor, RandomStream& rng, Vector& standard,
                              Vector& out) {
  const Index r = factor.scaled_columns.cols();
  standard.resize(r);
  for (Index a = 0; a < r; ++a) standard[a] = rng.normal();
  if (factor.clamp_count == 0)
    out.noalias() = factor.scaled_columns.triangularView<Eigen::Lower>() * standard;
  else
    out.noalias() = factor.scaled_columns * standard;
}

inline Vector sample_correlated(const CorrelationFactor& factor, RandomStream& rng) {
  Vector standard, out;
  sample_correlated(factor, rng, standard, out);
  return out;
}

/// Current value of the time-correlated noise eta_i(t).
struct NoiseState {
  Vector eta;
  double t = 0.0;
};

/// Draws eta from the stationary law: cov(eta_i, eta_j) = c_ij sigma^2 / tau.
inline NoiseState init_stationary(const ModelParams& params, const CorrelationFactor& factor, RandomStream& rng) {
  if (!(params.tau > 0.0)) throw ArgumentError("tau must be > 0");
  if (!(params.sigma >= 0.0)) throw ArgumentError("sigma must be >= 0");
  NoiseState state;
  state.eta = sample_correlated(factor, rng) * params.noise_scale();
  return state;
}

/// Reusable buffers for the noise recursion.
struct NoiseWorkspace {
  Vector standard;
  Vector innovation;
  // step coefficients for the last (dt, sigma, tau) seen
  double dt = -1.0, sigma = -1.0, tau = -1.0;
  double rho = 0.0, kick = 0.0;
};

/// eta(t + dt) = rho eta(t) + sqrt(1 - rho^2) (sigma / sqrt(tau)) xi, rho = exp(-dt / tau).
inline void advance_noise(NoiseState& state, double dt, const ModelParams& params, const CorrelationFactor& factor,
                          RandomStream& rng, NoiseWorkspace& ws) {
  if (!(dt > 0.0)) throw ArgumentError("time step must be positive");
  if (dt != ws.dt || params.sigma != ws.sigma || params.tau != ws.tau) {
    ws.dt = dt;
    ws.sigma = params.sigma;
    ws.tau = params.tau;
    ws.rho = std::exp(-dt / params.tau);
    ws.kick = std::sqrt(-std::expm1(-2.0 * dt / params.tau)) * params.noise_scale();
  }
  sample_correlated(factor, rng, ws.standard, ws.innovation);
  state.eta = ws.rho * state.eta + ws.kick * ws.innovation;
  state.t += dt;
}

inline NoiseState step_noise(NoiseState state, double dt, const ModelParams& params, const CorrelationFactor& factor,
                             RandomStream& rng) {
  NoiseWorkspace ws;
  advance_noise(state, dt, params, factor, rng, ws);
  return state;
}

}  // namespace exportnet
