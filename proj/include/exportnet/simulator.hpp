#pragma once

#include "exportnet/core.hpp"
#include "exportnet/dataset.hpp"
#include "exportnet/network.hpp"
#include "exportnet/noise.hpp"
#include "exportnet/params.hpp"
#include "exportnet/random.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace exportnet {

/// mu(t) = mu_bar + I(t).
inline double drift_rate(double t, const ModelParams& params) { return params.mu_bar + params.inflation.rate_at(t); }

enum class Scheme {
  /// Multiplicative term integrated exactly over the step, transfers by Euler.
  kExponentialEuler,
  /// Plain explicit Euler on the full right-hand side.
  kEuler,
};

struct StepWorkspace {
  Vector flow;
};

/// Advances Z in place over [t, t + dt] with the noise held at its current value.
/// The drift is evaluated at the step midpoint so the yearly inflation steps
/// integrate exactly when dt divides a year. Returns the number of components
/// for which the positivity guard replaced the additive update.
inline std::size_t advance_values(Vector& Z, const Vector& eta, const CouplingNetwork& network, double t, double dt,
                                  const ModelParams& params, Scheme scheme, StepWorkspace& ws) {
  const double mu = drift_rate(t + 0.5 * dt, params);
  std::size_t guarded = 0;
  if (network.coupling != 0.0)
    ws.flow.noalias() = network.rate * Z;
  else
    ws.flow.setZero(Z.size());
  for (Index i = 0; i < Z.size(); ++i) {
    const double growth = eta[i] + mu;
    double next = scheme == Scheme::kExponentialEuler ? (Z[i] + dt * ws.flow[i]) * std::exp(dt * growth)
                                                      : Z[i] + dt * (ws.flow[i] + growth * Z[i]);
    if (!(next > 0.0)) {
      next = Z[i] * std::exp(dt * (growth + ws.flow[i] / Z[i]));
      ++guarded;
    }
    if (!std::isfinite(next) || !(next > 0.0)) throw NumericalBlowupError(t + dt, i);
    Z[i] = next;
  }
  return guarded;
}

inline Vector step(const Vector& Z, const NoiseState& noise, const CouplingNetwork& network, double t, double dt,
                   const ModelParams& params, Scheme scheme = Scheme::kExponentialEuler) {
  if ((Z.array() <= 0.0).any()) throw ArgumentError("values must be strictly positive");
  if (!(dt > 0.0)) throw ArgumentError("time step must be positive");
  if (Z.size() != network.size() || noise.eta.size() != Z.size())
    throw DimensionError("state, noise and network sizes disagree");
  Vector next = Z;
  StepWorkspace ws;
  advance_values(next, noise.eta, network, t, dt, params, scheme, ws);
  return next;
}

struct SimulationOptions {
  double horizon = 38.0;
  double dt = 0.01;
  /// Spacing of stored samples; ignored when full_resolution is set.
  double sample_interval = 1.0;
  bool full_resolution = false;
  Scheme scheme = Scheme::kExponentialEuler;
};

/// Sampled path Z(t). states.col(k) is the value vector at times[k].
struct Trajectory {
  std::vector<double> times;
  Matrix states;
  std::uint64_t seed = 0;
  ModelParams params;
  std::size_t guard_activations = 0;
  std::vector<std::string> warnings;

  Index samples() const noexcept { return states.cols(); }

  /// Sample index at time t, or -1.
  Index index_of(double t) const {
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::abs(times[k] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return static_cast<Index>(k);
    return -1;
  }
};

/// Integrates the coupled SDE from `initial` over [0, horizon].
///
/// The noise starts from its stationary law and is advanced after every
/// value update, so eta is piecewise constant on each substep. `noise_factor`
/// is normally factor_correlation(C); passing the identity factor gives
/// cross-independent noise.
inline Trajectory simulate(const Vector& initial, const CouplingNetwork& network,
                           const CorrelationFactor& noise_factor, const ModelParams& params,
                           const SimulationOptions& options, std::uint64_t seed) {
  params.validate();
  const Index N = initial.size();
  if (network.size() != N || noise_factor.size() != N)
    throw DimensionError("initial state, network and noise factor sizes disagree");
  if ((initial.array() <= 0.0).any()) throw ArgumentError("initial values must be strictly positive");
  if (!(options.horizon > 0.0)) throw ArgumentError("horizon must be positive");
  if (!(options.dt > 0.0)) throw ArgumentError("time step must be positive");

  const auto steps = static_cast<std::int64_t>(std::llround(options.horizon / options.dt));
  if (steps < 1 || std::abs(static_cast<double>(steps) * options.dt - options.horizon) > 1e-9 * options.horizon)
    throw ArgumentError("horizon must be a whole number of time steps");
  std::int64_t stride = 1;
  if (!options.full_resolution) {
    stride = std::llround(options.sample_interval / options.dt);
    if (stride < 1 || std::abs(static_cast<double>(stride) * options.dt - options.sample_interval) > 1e-9)
      throw ArgumentError("sample interval must be a whole number of time steps");
  }

  Trajectory traj;
  traj.seed = seed;
  traj.params = params;
  if (options.dt > 0.1 * params.tau)
    traj.warnings.push_back("dt exceeds tau/10; the noise discretization is coarse");

  const auto sample_count = steps / stride + 1 + (steps % stride ? 1 : 0);
  traj.states.resize(N, sample_count);
  traj.times.reserve(static_cast<std::size_t>(sample_count));

  RandomStream rng(seed);
  NoiseState noise = init_stationary(params, noise_factor, rng);
  NoiseWorkspace noise_ws;
  StepWorkspace step_ws;
  Vector Z = initial;

  Index stored = 0;
  traj.states.col(stored++) = Z;
  traj.times.push_back(0.0);
  for (std::int64_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * options.dt;
    traj.guard_activations += advance_values(Z, noise.eta, network, t, options.dt, params, options.scheme, step_ws);
    advance_noise(noise, options.dt, params, noise_factor, rng, noise_ws);
    if ((k + 1) % stride == 0 || k + 1 == steps) {
      traj.states.col(stored++) = Z;
      traj.times.push_back(static_cast<double>(k + 1) * options.dt);
    }
  }
  return traj;
}

}  // namespace exportnet

namespace exportnet {

/// Ids "P000", "P001", ... for generated panels.
inline std::vector<std::string> default_product_ids(Index count) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(count));
  const int width = count > 1000 ? 4 : 3;
  for (Index i = 0; i < count; ++i) {
    std::string digits = std::to_string(i);
    ids.push_back("P" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') +
                  digits);
  }
  return ids;
}

/// Yearly samples of a trajectory as a panel. Requires a unit sampling interval.
inline ExportPanel to_panel(const Trajectory& traj, std::vector<std::string> ids, int base_year) {
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    if (std::abs(traj.times[k] - static_cast<double>(k)) > 1e-9)
      throw ArgumentError("trajectory is not sampled on a yearly grid");
  if (static_cast<Index>(ids.size()) != traj.states.rows()) throw DimensionError("id count does not match trajectory");
  return ExportPanel{traj.states, std::move(ids), base_year};
}

}  // namespace exportnet
