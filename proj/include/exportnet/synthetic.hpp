#pragma once

#include "exportnet/core.hpp"
#include "exportnet/dataset.hpp"
#include "exportnet/network.hpp"
#include "exportnet/noise.hpp"
#include "exportnet/params.hpp"
#include "exportnet/random.hpp"
#include "exportnet/simulator.hpp"

#include <cmath>
#include <cstdint>
#include <optional>

namespace exportnet {

/// C = normalize(B B^T + I) with k Gaussian factors of standard deviation
/// `loadings_scale`. k = 0 gives the identity.
inline Matrix make_factor_correlation(Index products, Index factors, double loadings_scale, std::uint64_t seed) {
  if (products < 1) throw ArgumentError("need at least one product");
  if (factors < 0 || (factors >= products && factors > 0)) throw ArgumentError("factor count must be in [0, N)");
  if (factors == 0) return Matrix::Identity(products, products);
  RandomStream rng(seed);
  Matrix loadings(products, factors);
  for (Index i = 0; i < products; ++i)
    for (Index k = 0; k < factors; ++k) loadings(i, k) = loadings_scale * rng.normal();
  Matrix cov = loadings * loadings.transpose();
  cov.diagonal().array() += 1.0;
  const Vector inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Matrix C = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  C = 0.5 * (C + C.transpose()).eval();
  C.diagonal().setOnes();
  return C;
}

/// Weights proportional to Pareto quantiles x_i = ((i + 1/2) / N)^(-1/exponent), summing to 1.
/// Product 0 is the largest.
inline Vector pareto_weights(Index products, double exponent) {
  if (products < 1) throw ArgumentError("need at least one product");
  if (!(exponent > 0.0)) throw ArgumentError("Pareto exponent must be positive");
  Vector z(products);
  for (Index i = 0; i < products; ++i)
    z[i] = std::pow((static_cast<double>(i) + 0.5) / static_cast<double>(products), -1.0 / exponent);
  return z / z.sum();
}

/// Z_i(0) = total * z_i^compression * exp(dispersion * u_i), renormalized to `total`.
/// compression < 1 starts from a flatter ranking than z. A random `emerging_fraction`
/// of products is further divided by emerging_depth^u with u uniform on [0, 1].
inline Vector make_initial_condition(const Vector& z, double dispersion, double compression, double total,
                                     RandomStream& rng, double emerging_fraction = 0.0,
                                     double emerging_depth = 1.0) {
  if (!(emerging_fraction >= 0.0 && emerging_fraction <= 1.0)) throw ArgumentError("emerging fraction must be in [0, 1]");
  if (!(emerging_depth >= 1.0)) throw ArgumentError("emerging depth must be >= 1");
  Vector v(z.size());
  for (Index i = 0; i < z.size(); ++i) v[i] = std::pow(z[i], compression) * std::exp(dispersion * rng.normal());
  if (emerging_fraction > 0.0)
    for (Index i = 0; i < z.size(); ++i)
      if (rng.uniform() < emerging_fraction) v[i] /= std::pow(emerging_depth, rng.uniform());
  return v * (total / v.sum());
}

struct SyntheticSpec {
  Index products = 219;
  Index years = 39;
  int base_year = 1962;
  ModelParams params = reference_params(reference_inflation());

  std::optional<Vector> z_target;
  double pareto_exponent = 1.5;

  std::optional<Matrix> correlation_target;
  Index factors = 3;
  double loadings_scale = 1.0;

  std::optional<Vector> initial;
  double initial_total = 1e5;
  double initial_dispersion = 0.5;
  double initial_compression = 1.0;
  double emerging_fraction = 0.0;
  double emerging_depth = 1.0;

  std::uint64_t seed = 1;
  SimulationOptions simulation;
};

struct SyntheticPanel {
  ExportPanel panel;
  ModelParams truth;
  Vector z;
  Matrix correlation;
  Vector initial;
  std::size_t guard_activations = 0;
};

/// Resolves the recipes of a spec into concrete (z, C, Z(0)).
inline SyntheticPanel resolve_synthetic(const SyntheticSpec& spec) {
  if (spec.products < 2 || spec.years < 3) throw DimensionError("synthetic panel needs N >= 2 and Y >= 3");
  SyntheticPanel out;
  out.truth = spec.params;
  out.z = spec.z_target ? *spec.z_target : pareto_weights(spec.products, spec.pareto_exponent);
  out.correlation = spec.correlation_target
                        ? *spec.correlation_target
                        : make_factor_correlation(spec.products, spec.factors, spec.loadings_scale,
                                                  derive_seed(spec.seed, 1));
  if (spec.initial) {
    out.initial = *spec.initial;
  } else {
    RandomStream rng(derive_seed(spec.seed, 2));
    out.initial = make_initial_condition(out.z, spec.initial_dispersion, spec.initial_compression,
                                         spec.initial_total, rng, spec.emerging_fraction, spec.emerging_depth);
  }
  if (out.z.size() != spec.products || out.correlation.rows() != spec.products ||
      out.initial.size() != spec.products)
    throw DimensionError("synthetic recipe sizes disagree with the product count");
  return out;
}

/// Simulates the model at spec.params and samples it yearly into a panel.
inline SyntheticPanel generate_panel(const SyntheticSpec& spec) {
  SyntheticPanel out = resolve_synthetic(spec);
  const CouplingNetwork network = build_coupling(out.z, out.correlation, spec.params.coupling);
  const CorrelationFactor factor = factor_correlation(out.correlation);
  SimulationOptions sim = spec.simulation;
  sim.horizon = static_cast<double>(spec.years - 1);
  sim.sample_interval = 1.0;
  sim.full_resolution = false;
  const Trajectory traj = simulate(out.initial, network, factor, spec.params, sim, derive_seed(spec.seed, 3));
  out.guard_activations = traj.guard_activations;
  out.panel = to_panel(traj, default_product_ids(spec.products), spec.base_year);
  return out;
}

}  // namespace exportnet
