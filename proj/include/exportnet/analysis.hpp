#pragma once

#include "exportnet/calibration.hpp"
#include "exportnet/core.hpp"
#include "exportnet/dataset.hpp"
#include "exportnet/network.hpp"
#include "exportnet/noise.hpp"
#include "exportnet/parallel.hpp"
#include "exportnet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace exportnet {

/// 1-based ranks, ties sharing the average of the ranks they span.
inline Vector average_ranks(const Vector& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x[a] < x[b]; });
  Vector ranks(n);
  for (Index lo = 0; lo < n;) {
    Index hi = lo;
    while (hi + 1 < n && x[order[hi + 1]] == x[order[lo]]) ++hi;
    const double r = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (Index k = lo; k <= hi; ++k) ranks[order[k]] = r;
    lo = hi + 1;
  }
  return ranks;
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw DimensionError("spearman inputs differ in length");
  if (x.size() < 2) throw ArgumentError("spearman needs at least 2 observations");
  const Vector rx = average_ranks(x), ry = average_ranks(y);
  const Vector dx = rx.array() - rx.mean(), dy = ry.array() - ry.mean();
  const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw ArgumentError("rank correlation undefined for a constant input");
  return std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// r_s(t) between each stored state and the rank weights.
inline std::vector<double> spearman_trajectory(const Trajectory& traj, const Vector& z) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(traj.samples()));
  for (Index k = 0; k < traj.samples(); ++k) out.push_back(spearman(traj.states.col(k), z));
  return out;
}

/// r_s(t) = r_inf + (r0 - r_inf) exp(-t / tau_s).
struct RelaxationFit {
  double r_inf = 0.0;
  double tau_s = 0.0;
  double r0 = 0.0;
  double residual = 0.0;  ///< RMS
  bool low_ensemble = false;
};

namespace detail {

struct ExpLinear {
  double r_inf, amplitude, sse;
};

/// Best (r_inf, amplitude) at fixed tau, with r_inf kept in [-1, 1].
inline ExpLinear exp_linear_fit(std::span<const double> t, std::span<const double> y, double tau) {
  double s1 = 0, se = 0, see = 0, sy = 0, sey = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double e = std::exp(-t[k] / tau);
    se += e;
    see += e * e;
    sy += y[k];
    sey += e * y[k];
  }
  s1 = n;
  const double det = s1 * see - se * se;
  double a = 0.0, b = 0.0;
  if (std::abs(det) > 1e-300) {
    a = (see * sy - se * sey) / det;
    b = (s1 * sey - se * sy) / det;
  }
  if (!(std::abs(det) > 1e-300) || a < -1.0 || a > 1.0) {
    a = std::clamp(a, -1.0, 1.0);
    b = see > 0.0 ? (sey - a * se) / see : 0.0;
  }
  double sse = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double r = y[k] - a - b * std::exp(-t[k] / tau);
    sse += r * r;
  }
  return {a, b, sse};
}

}  // namespace detail

/// Three-parameter least-squares exponential fit. The linear parameters are
/// eliminated in closed form; tau_s is found by a log grid plus golden section.
inline RelaxationFit fit_relaxation(std::span<const double> times, std::span<const double> series,
                                    int ensemble_size) {
  if (times.size() != series.size()) throw DimensionError("times and series differ in length");
  if (times.size() < 4) throw ArgumentError("relaxation fit needs at least 4 points");
  const double span = times.back() - times.front();
  if (!(span > 0.0)) throw ArgumentError("times must span a positive interval");
  // Shift so the fit is anchored at the first sample.
  std::vector<double> t(times.begin(), times.end());
  for (auto& v : t) v -= times.front();

  const double lo = std::log(span * 1e-3), hi = std::log(span * 1e3);
  constexpr int kGrid = 241;
  int best_k = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGrid; ++k) {
    const double sse = detail::exp_linear_fit(t, series, std::exp(lo + (hi - lo) * k / (kGrid - 1))).sse;
    if (sse < best) {
      best = sse;
      best_k = k;
    }
  }
  if (best_k == 0 || best_k == kGrid - 1)
    throw ConvergenceError("relaxation time not bracketed: best tau_s at the edge of [" +
                           std::to_string(std::exp(lo)) + ", " + std::to_string(std::exp(hi)) + "]");
  const double step = (hi - lo) / (kGrid - 1);
  const double x0 = lo + step * (best_k - 1), x1 = lo + step * (best_k + 1);
  const double log_tau = detail::golden_section(
      [&](double x) { return detail::exp_linear_fit(t, series, std::exp(x)).sse; }, x0, x1, 1e-13);
  const double tau = std::exp(log_tau);
  const auto lin = detail::exp_linear_fit(t, series, tau);
  RelaxationFit fit;
  fit.tau_s = tau;
  fit.r_inf = lin.r_inf;
  fit.r0 = lin.r_inf + lin.amplitude;
  fit.residual = std::sqrt(lin.sse / static_cast<double>(t.size()));
  fit.low_ensemble = ensemble_size < 10;
  return fit;
}

/// lambda_T = (1 / (N T)) sum_i ln(Z_i(T) / Z_i(0)).
inline double growth_rate(const Trajectory& traj, double horizon) {
  if (!(horizon > 0.0)) throw ArgumentError("horizon must be positive");
  const Index k = traj.index_of(horizon);
  if (k < 0) throw ArgumentError("horizon " + std::to_string(horizon) + " is not a sample time of the trajectory");
  return mean_log_growth(traj.states.col(0), traj.states.col(k), horizon);
}

struct EnsembleSpec {
  Vector initial;
  Vector z;
  Matrix correlation;
  /// Noise correlation; defaults to `correlation`. Identity gives independent noise.
  std::optional<Matrix> noise_correlation;
};

/// Runs `replicates` trajectories with seeds derive_seed(seed, r).
inline std::vector<Trajectory> simulate_ensemble(const EnsembleSpec& spec, const ModelParams& params,
                                                 const SimulationOptions& sim, int replicates, std::uint64_t seed) {
  if (replicates < 1) throw ArgumentError("need at least one replicate");
  const CouplingNetwork network = build_coupling(spec.z, spec.correlation, params.coupling);
  const CorrelationFactor factor = factor_correlation(spec.noise_correlation ? *spec.noise_correlation
                                                                              : spec.correlation);
  std::vector<Trajectory> out(static_cast<std::size_t>(replicates));
  parallel_for(out.size(), [&](std::size_t r) {
    out[r] = simulate(spec.initial, network, factor, params, sim, derive_seed(seed, r));
  });
  return out;
}

/// Ensemble-mean r_s(t) on the trajectories' common sample grid.
inline std::vector<double> mean_spearman(std::span<const Trajectory> ensemble, const Vector& z) {
  if (ensemble.empty()) throw ArgumentError("empty ensemble");
  std::vector<double> mean(static_cast<std::size_t>(ensemble.front().samples()), 0.0);
  for (const auto& traj : ensemble) {
    const auto rs = spearman_trajectory(traj, z);
    if (rs.size() != mean.size()) throw DimensionError("trajectories are sampled on different grids");
    for (std::size_t k = 0; k < rs.size(); ++k) mean[k] += rs[k];
  }
  for (auto& v : mean) v /= static_cast<double>(ensemble.size());
  return mean;
}

struct GrowthCurve {
  std::vector<double> g_values;
  std::vector<double> lambda;
  std::vector<double> lambda_stderr;
  double horizon = 0.0;
  double baseline = 0.0;  ///< mu_bar plus mean inflation when inflation is active

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(lambda.begin(), lambda.end()) - lambda.begin());
  }

  /// Location of the maximum refined by a parabola through the three grid
  /// points around argmax, in log G. Falls back to the grid value at an edge
  /// or on a non-concave triple.
  double peak() const {
    const std::size_t k = argmax();
    if (k == 0 || k + 1 >= lambda.size()) return g_values[k];
    const double x0 = std::log(g_values[k - 1]), x1 = std::log(g_values[k]), x2 = std::log(g_values[k + 1]);
    const double y0 = lambda[k - 1], y1 = lambda[k], y2 = lambda[k + 1];
    const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
    const double curvature = (d12 - d01) / (x2 - x0);
    if (!(curvature < 0.0)) return g_values[k];
    const double x = 0.5 * (x0 + x1) - d01 / (2.0 * curvature);
    return std::exp(std::clamp(x, x0, x2));
  }
};

struct SweepOptions {
  double horizon = 38.0;
  int replicates = 50;
  std::uint64_t seed = 1;
  SimulationOptions simulation;
  /// false: I(t) = 0 and the baseline is mu_bar. true: the params' schedule,
  /// extended by its mean, and the baseline is mu_bar + mean(I).
  bool with_inflation = false;
};

inline std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > lo) || count < 2) throw ArgumentError("log grid needs 0 < lo < hi and count >= 2");
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) grid[static_cast<std::size_t>(k)] = lo * std::pow(hi / lo, double(k) / (count - 1));
  return grid;
}

/// Mean lambda_T over an ensemble for each G in the grid. The same replicate
/// seeds are used at every grid point.
inline GrowthCurve sweep_G(const EnsembleSpec& spec, const ModelParams& base, std::span<const double> grid,
                           const SweepOptions& opt) {
  if (grid.empty()) throw ArgumentError("empty G grid");
  if (opt.replicates < 2) throw ArgumentError("sweep needs at least 2 replicates");
  ModelParams params = base;
  if (!opt.with_inflation) params.inflation = InflationSchedule::zero(0);
  else params.inflation.extension = InflationExtension::kMean;

  GrowthCurve curve;
  curve.horizon = opt.horizon;
  curve.baseline = base.mu_bar + (opt.with_inflation ? base.inflation.mean() : 0.0);
  curve.g_values.assign(grid.begin(), grid.end());
  SimulationOptions sim = opt.simulation;
  sim.horizon = opt.horizon;
  sim.full_resolution = false;
  sim.sample_interval = opt.horizon;

  const CorrelationFactor factor = factor_correlation(spec.noise_correlation ? *spec.noise_correlation
                                                                              : spec.correlation);
  const std::size_t R = static_cast<std::size_t>(opt.replicates);
  std::vector<double> samples(grid.size() * R);
  std::vector<CouplingNetwork> networks;
  networks.reserve(grid.size());
  for (double G : grid) networks.push_back(build_coupling(spec.z, spec.correlation, G));
  parallel_for(samples.size(), [&](std::size_t task) {
    const std::size_t g = task / R, r = task % R;
    ModelParams p = params;
    p.coupling = grid[g];
    const Trajectory traj = simulate(spec.initial, networks[g], factor, p, sim, derive_seed(opt.seed, r));
    samples[task] = growth_rate(traj, opt.horizon);
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double mean = 0.0;
    for (std::size_t r = 0; r < R; ++r) mean += samples[g * R + r];
    mean /= static_cast<double>(R);
    double ss = 0.0;
    for (std::size_t r = 0; r < R; ++r) ss += (samples[g * R + r] - mean) * (samples[g * R + r] - mean);
    curve.lambda.push_back(mean);
    curve.lambda_stderr.push_back(std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R)));
  }
  return curve;
}

/// Averages the empirical correlation matrix of each yearly-sampled history.
inline Matrix reconstruct_correlators(std::span<const Trajectory> ensemble) {
  if (ensemble.size() < 2) throw ArgumentError("correlator reconstruction needs at least 2 histories");
  Matrix sum;
  for (const auto& traj : ensemble) {
    const auto panel = to_panel(traj, default_product_ids(traj.states.rows()), 0);
    const Matrix C = compute_correlators(panel).correlation;
    if (sum.size() == 0) sum = Matrix::Zero(C.rows(), C.cols());
    if (sum.rows() != C.rows()) throw DimensionError("histories differ in product count");
    sum += C;
  }
  return sum / static_cast<double>(ensemble.size());
}

/// Three lowest-, three median- and three highest-weight products (by `per_group`),
/// in increasing weight order.
inline std::vector<Index> comparison_subset(const Vector& z, Index per_group = 3) {
  const Index n = z.size();
  if (n < 3 * per_group) throw ArgumentError("not enough products for the comparison subset");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return z[a] < z[b]; });
  std::vector<Index> subset;
  const Index mid = n / 2 - per_group / 2;
  for (Index k = 0; k < per_group; ++k) subset.push_back(order[static_cast<std::size_t>(k)]);
  for (Index k = 0; k < per_group; ++k) subset.push_back(order[static_cast<std::size_t>(mid + k)]);
  for (Index k = 0; k < per_group; ++k) subset.push_back(order[static_cast<std::size_t>(n - per_group + k)]);
  return subset;
}

/// Mean |a_ij - b_ij| over the off-diagonal pairs of `subset`.
inline double subset_mean_abs_deviation(const Matrix& a, const Matrix& b, std::span<const Index> subset) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t p = 0; p < subset.size(); ++p)
    for (std::size_t q = 0; q < subset.size(); ++q)
      if (p != q) {
        sum += std::abs(a(subset[p], subset[q]) - b(subset[p], subset[q]));
        ++count;
      }
  return count ? sum / count : 0.0;
}

/// Mean |c_ij| over i != j.
inline double mean_abs_off_diagonal(const Matrix& C) {
  const Index n = C.rows();
  if (n < 2) return 0.0;
  return (C.cwiseAbs().sum() - C.diagonal().cwiseAbs().sum()) / static_cast<double>(n * (n - 1));
}

struct ParetoFit {
  double hill_exponent = 0.0;
  double rank_size_exponent = 0.0;
  Index tail_size = 0;
  double threshold = 0.0;
  double ks_distance = 0.0;
  double ks_critical = 0.0;
  bool plausible = false;  ///< KS distance below the 5% critical value
};

/// Hill estimate on the top quartile, cross-checked by a rank-size log-log
/// regression and a Kolmogorov-Smirnov distance to the fitted tail.
inline ParetoFit pareto_tail_exponent(const Vector& values) {
  const Index n = values.size();
  if (n < 50) throw ArgumentError("Pareto tail estimate needs at least 50 values");
  if ((values.array() <= 0.0).any()) throw ArgumentError("values must be positive");
  std::vector<double> v(values.data(), values.data() + n);
  std::sort(v.begin(), v.end(), std::greater<>());
  ParetoFit fit;
  const Index k = n / 4;
  fit.tail_size = k;
  fit.threshold = v[static_cast<std::size_t>(k)];
  double log_sum = 0.0;
  for (Index i = 0; i < k; ++i) log_sum += std::log(v[static_cast<std::size_t>(i)] / fit.threshold);
  if (!(log_sum > 0.0)) throw ArgumentError("tail is degenerate (all tail values equal)");
  fit.hill_exponent = static_cast<double>(k) / log_sum;

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (Index i = 0; i < k; ++i) {
    const double x = std::log(v[static_cast<std::size_t>(i)]);
    const double y = std::log(static_cast<double>(i + 1));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double kk = static_cast<double>(k);
  const double den = kk * sxx - sx * sx;
  fit.rank_size_exponent = den > 0.0 ? -(kk * sxy - sx * sy) / den : 0.0;

  // Tail sample in increasing order against F(x) = 1 - (x / threshold)^-alpha.
  double d = 0.0;
  for (Index m = 0; m < k; ++m) {
    const double x = v[static_cast<std::size_t>(k - 1 - m)];
    const double model = 1.0 - std::pow(x / fit.threshold, -fit.hill_exponent);
    d = std::max({d, std::abs(static_cast<double>(m + 1) / kk - model), std::abs(static_cast<double>(m) / kk - model)});
  }
  fit.ks_distance = d;
  fit.ks_critical = 1.36 / std::sqrt(kk);
  fit.plausible = d < fit.ks_critical;
  return fit;
}

}  // namespace exportnet
