#pragma once

#include "exportnet/core.hpp"
#include "exportnet/dataset.hpp"
#include "exportnet/network.hpp"
#include "exportnet/noise.hpp"
#include "exportnet/parallel.hpp"
#include "exportnet/params.hpp"
#include "exportnet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace exportnet {

/// One (f, g) pair: f is the inflation-adjusted mean log growth of a product
/// between years n1 and n2, g the matching transfer term with G factored out.
struct RegressionPoint {
  Index product = 0;
  Index n1 = 0;
  Index n2 = 0;
  double f = 0.0;
  double g = 0.0;
};

namespace detail {

/// Cumulative trapezoid sum of the transfer term: U(i, n) = (n - 0) g_i(0, n).
inline Matrix transfer_integral(const ExportPanel& panel, const PanelStatistics& stats) {
  const Index N = panel.products();
  const Index Y = panel.years();
  if (stats.z.size() != N || stats.correlation.rows() != N || stats.correlation.cols() != N)
    throw DimensionError("panel and statistics disagree in size");
  Matrix weights = stats.correlation.cwiseAbs();
  weights.diagonal().setZero();
  const Matrix inflow = weights * panel.values;  // sum_{j != i} |c_ij| Z_jn
  const Vector outflow = weights * stats.z;      // sum_{j != i} z_j |c_ij|
  const Matrix ratio = (stats.z.asDiagonal() * inflow).cwiseQuotient(panel.values);
  Matrix U = Matrix::Zero(N, Y);
  for (Index n = 1; n < Y; ++n)
    U.col(n) = U.col(n - 1) + 0.5 * (ratio.col(n - 1) + ratio.col(n)) - outflow;
  return U;
}

}  // namespace detail

/// All N * Y (Y - 1) / 2 regression points, ordered by product, then n1, then n2.
inline std::vector<RegressionPoint> compute_fg_points(const ExportPanel& panel, const PanelStatistics& stats,
                                                      const InflationSchedule& inflation) {
  const Index N = panel.products();
  const Index Y = panel.years();
  const Matrix U = detail::transfer_integral(panel, stats);
  const Matrix logs = panel.values.array().log().matrix();
  std::vector<RegressionPoint> points;
  points.reserve(static_cast<std::size_t>(N * Y * (Y - 1) / 2));
  for (Index i = 0; i < N; ++i)
    for (Index n1 = 0; n1 < Y; ++n1)
      for (Index n2 = n1 + 1; n2 < Y; ++n2) {
        const double span = static_cast<double>(n2 - n1);
        const double infl = inflation.integrate(static_cast<double>(n1), static_cast<double>(n2));
        points.push_back({i, n1, n2, (logs(i, n2) - logs(i, n1) - infl) / span, (U(i, n2) - U(i, n1)) / span});
      }
  return points;
}

/// Indices of the `fraction` of points with the largest |g|; ties go to the lower index.
inline std::vector<std::size_t> select_top_g(std::span<const RegressionPoint> points, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("top fraction must be in (0, 1]");
  const auto count = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(points.size()) - 1e-9)));
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    const double ga = std::abs(points[a].g), gb = std::abs(points[b].g);
    return ga != gb ? ga > gb : a < b;
  };
  const auto keep = std::min(count, order.size());
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep) - 1, order.end(), before);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

struct CouplingFit {
  double coupling = 0.0;   ///< regression slope, the calibrated G
  double intercept = 0.0;  ///< reported only; too noisy to serve as mu_bar
  std::size_t total_points = 0;
  std::vector<std::size_t> selected;
  double residual_rms = 0.0;
};

/// Least-squares line f = G g + k through the points with the largest |g|.
inline CouplingFit calibrate_G(std::span<const RegressionPoint> points, double top_fraction = 0.1) {
  if (points.size() < 10) throw ArgumentError("coupling regression needs at least 10 points");
  CouplingFit fit;
  fit.total_points = points.size();
  fit.selected = select_top_g(points, top_fraction);
  const double m = static_cast<double>(fit.selected.size());
  double mean_g = 0.0, mean_f = 0.0;
  for (auto k : fit.selected) {
    mean_g += points[k].g;
    mean_f += points[k].f;
  }
  mean_g /= m;
  mean_f /= m;
  double sxx = 0.0, sxy = 0.0;
  for (auto k : fit.selected) {
    const double dg = points[k].g - mean_g;
    sxx += dg * dg;
    sxy += dg * (points[k].f - mean_f);
  }
  if (!(sxx > 1e-300) || sxx <= 1e-24 * m * std::max(1.0, mean_g * mean_g))
    throw SingularFitError("selected regression points all share the same g");
  fit.coupling = sxy / sxx;
  fit.intercept = mean_f - fit.coupling * mean_g;
  double sse = 0.0;
  for (auto k : fit.selected) {
    const double r = points[k].f - fit.coupling * points[k].g - fit.intercept;
    sse += r * r;
  }
  fit.residual_rms = std::sqrt(sse / m);
  return fit;
}

/// Var[int_0^n eta dt] = 2 sigma^2 [n + tau (exp(-n / tau) - 1)].
inline double theoretical_variance(double n, double sigma, double tau) {
  if (n < 0.0) throw ArgumentError("n must be non-negative");
  if (!(tau > 0.0)) throw ArgumentError("tau must be positive");
  return 2.0 * sigma * sigma * (n + tau * std::expm1(-n / tau));
}

/// Cross-sectional variance of n [f_i(0, n) - G g_i(0, n)] for n = 1..Y-1.
/// Entry k of the result is n = k + 1.
inline std::vector<double> variance_curve(const ExportPanel& panel, const PanelStatistics& stats, double coupling,
                                          const InflationSchedule& inflation) {
  const Index N = panel.products();
  const Index Y = panel.years();
  // the transfer term drops out at G = 0; skipping it keeps very wide panels cheap
  const Matrix U = coupling != 0.0 ? detail::transfer_integral(panel, stats) : Matrix::Zero(N, Y);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(Y - 1));
  Vector residual(N);
  for (Index n = 1; n < Y; ++n) {
    const double infl = inflation.integrate(0.0, static_cast<double>(n));
    for (Index i = 0; i < N; ++i)
      residual[i] = std::log(panel.values(i, n) / panel.values(i, 0)) - infl - coupling * U(i, n);
    const double mean = residual.mean();
    curve.push_back((residual.array() - mean).square().sum() / static_cast<double>(N - 1));
  }
  return curve;
}

enum class VarianceWeighting {
  kUnweighted,   ///< plain least squares on the curve
  kInverseSquare,  ///< residual at n weighted by 1/n^2, i.e. relative misfit
};

struct VarianceFitOptions {
  VarianceWeighting weighting = VarianceWeighting::kInverseSquare;
  double sigma_min = 1e-3, sigma_max = 1.0;
  double tau_min = 1e-2, tau_max = 20.0;
  int grid_points = 61;
  int max_sweeps = 200;
};

struct VarianceFit {
  double sigma = 0.0;
  double tau = 0.0;
  double residual = 0.0;  ///< RMS misfit of the curve
  bool converged = false;
  bool tau_at_bound = false;  ///< tau sits on tau_min or tau_max
  std::vector<double> curve;
};

namespace detail {

inline double variance_weight(std::size_t k, VarianceWeighting w) {
  const double n = static_cast<double>(k + 1);
  return w == VarianceWeighting::kInverseSquare ? 1.0 / (n * n) : 1.0;
}

inline double variance_sse(std::span<const double> curve, double sigma, double tau, VarianceWeighting w) {
  double sse = 0.0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const double r = curve[k] - theoretical_variance(static_cast<double>(k + 1), sigma, tau);
    sse += variance_weight(k, w) * r * r;
  }
  return sse;
}

/// Exact minimizer of the misfit over sigma at fixed tau.
inline double best_sigma(std::span<const double> curve, double tau, VarianceWeighting w) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    const double b = theoretical_variance(static_cast<double>(k + 1), 1.0, tau);
    num += variance_weight(k, w) * curve[k] * b;
    den += variance_weight(k, w) * b * b;
  }
  return den > 0.0 ? std::sqrt(std::max(0.0, num / den)) : 0.0;
}

template <typename F>
double golden_section(F&& f, double lo, double hi, double tol, int max_iter = 200) {
  constexpr double kInvPhi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

}  // namespace detail

/// Fits the variance law to a curve: log-grid search, then coordinate descent
/// (closed-form sigma step, golden-section tau step in log space).
inline VarianceFit fit_variance_curve(std::vector<double> curve, const VarianceFitOptions& opt = {}) {
  if (curve.size() < 2) throw ArgumentError("variance curve needs at least 2 points");
  VarianceFit fit;
  fit.curve = std::move(curve);
  const std::span<const double> c(fit.curve);

  const double ls0 = std::log(opt.sigma_min), ls1 = std::log(opt.sigma_max);
  const double lt0 = std::log(opt.tau_min), lt1 = std::log(opt.tau_max);
  const int G = std::max(2, opt.grid_points);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < G; ++a)
    for (int b = 0; b < G; ++b) {
      const double s = std::exp(ls0 + (ls1 - ls0) * a / (G - 1));
      const double t = std::exp(lt0 + (lt1 - lt0) * b / (G - 1));
      const double sse = detail::variance_sse(c, s, t, opt.weighting);
      if (sse < best) {
        best = sse;
        fit.sigma = s;
        fit.tau = t;
      }
    }

  const double tau_step = (lt1 - lt0) / (G - 1);
  const double tau_floor = lt0, tau_ceiling = lt1;
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    const double prev_sigma = fit.sigma, prev_tau = fit.tau;
    fit.sigma = detail::best_sigma(c, fit.tau, opt.weighting);
    const double s = fit.sigma;
    const double lt = std::log(fit.tau);
    const double lo = std::max(tau_floor, lt - 2.0 * tau_step), hi = std::min(tau_ceiling, lt + 2.0 * tau_step);
    const double lt_new = detail::golden_section([&](double x) { return detail::variance_sse(c, s, std::exp(x), opt.weighting); }, lo,
                                                 hi, 1e-12);
    if (detail::variance_sse(c, s, std::exp(lt_new), opt.weighting) <= detail::variance_sse(c, s, fit.tau, opt.weighting))
      fit.tau = std::exp(lt_new);
    const double change = std::abs(fit.sigma - prev_sigma) / std::max(prev_sigma, 1e-12) +
                          std::abs(std::log(fit.tau / prev_tau));
    if (change < 1e-10) {
      fit.converged = true;
      break;
    }
  }
  fit.tau = std::clamp(fit.tau, opt.tau_min, opt.tau_max);
  fit.tau_at_bound = std::abs(std::log(fit.tau / opt.tau_min)) < 1e-6 || std::abs(std::log(fit.tau / opt.tau_max)) < 1e-6;
  fit.residual = std::sqrt(detail::variance_sse(c, fit.sigma, fit.tau, VarianceWeighting::kUnweighted) /
                           static_cast<double>(c.size()));
  return fit;
}

inline VarianceFit fit_sigma_tau(const ExportPanel& panel, const PanelStatistics& stats, double coupling,
                                 const InflationSchedule& inflation, const VarianceFitOptions& opt = {}) {
  return fit_variance_curve(variance_curve(panel, stats, coupling, inflation), opt);
}

/// lambda_T = (1 / (N T)) sum_i ln(Z_i(T) / Z_i(0)) between two value vectors.
inline double mean_log_growth(const Vector& start, const Vector& end, double horizon) {
  return (end.array() / start.array()).log().mean() / horizon;
}

struct MuBarOptions {
  int replicates = 100;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  int max_iterations = 10;
  SimulationOptions simulation;  ///< horizon is taken from the panel
};

struct GrowthMatch {
  double mu_bar = 0.0;
  double empirical_growth = 0.0;
  double simulated_growth = 0.0;
  int iterations = 0;
};

namespace detail {

/// Ensemble mean of lambda_T with common random numbers across calls.
inline double ensemble_growth(const Vector& initial, const CouplingNetwork& network, const CorrelationFactor& factor,
                              const ModelParams& params, const SimulationOptions& sim, int replicates,
                              std::uint64_t seed) {
  std::vector<double> growth(static_cast<std::size_t>(replicates));
  parallel_for(growth.size(), [&](std::size_t r) {
    const Trajectory traj = simulate(initial, network, factor, params, sim, derive_seed(seed, r));
    growth[r] = mean_log_growth(traj.states.col(0), traj.states.col(traj.samples() - 1), sim.horizon);
  });
  return std::accumulate(growth.begin(), growth.end(), 0.0) / static_cast<double>(replicates);
}

}  // namespace detail

/// Finds mu_bar such that simulated histories from the panel's first year
/// reproduce its mean log growth. lambda is an additive function of mu_bar up
/// to discretization error, so the secant iteration settles in two or three steps.
inline GrowthMatch calibrate_mu_bar(const ExportPanel& panel, const PanelStatistics& stats, double coupling,
                                    double sigma, double tau, const InflationSchedule& inflation,
                                    const MuBarOptions& opt = {}) {
  if (opt.replicates < 1) throw ArgumentError("need at least one replicate");
  const double horizon = static_cast<double>(panel.years() - 1);
  const Vector initial = panel.values.col(0);
  GrowthMatch match;
  match.empirical_growth = mean_log_growth(initial, panel.values.col(panel.years() - 1), horizon);

  const CouplingNetwork network = build_coupling(stats.z, stats.correlation, coupling);
  const CorrelationFactor factor = factor_correlation(stats.correlation);
  SimulationOptions sim = opt.simulation;
  sim.horizon = horizon;
  // the noise discretization needs dt well below tau
  if (tau > 0.0 && sim.dt > 0.1 * tau) sim.dt = 1.0 / std::ceil(10.0 / tau);
  ModelParams params{coupling, sigma, tau, 0.0, inflation};

  auto mismatch = [&](double mu) {
    params.mu_bar = mu;
    ++match.iterations;
    return detail::ensemble_growth(initial, network, factor, params, sim, opt.replicates, opt.seed) -
           match.empirical_growth;
  };

  double x0 = match.empirical_growth - inflation.integrate(0.0, horizon) / horizon;
  double m0 = mismatch(x0);
  double x1 = x0 - m0;
  double m1 = mismatch(x1);
  while (std::abs(m1) >= opt.tolerance) {
    if (match.iterations >= opt.max_iterations || m1 == m0)
      throw ConvergenceError("mu_bar growth matching did not converge (mismatch " + std::to_string(m1) + ")");
    const double x2 = x1 - m1 * (x1 - x0) / (m1 - m0);
    x0 = x1;
    m0 = m1;
    x1 = x2;
    m1 = mismatch(x1);
  }
  match.mu_bar = x1;
  match.simulated_growth = m1 + match.empirical_growth;
  return match;
}

struct CalibrationOptions {
  Index weight_window = 10;
  double top_fraction = 0.1;
  VarianceFitOptions variance;
  MuBarOptions mu_bar;
};

struct ParameterSpread {
  double coupling = 0.0;
  double sigma = 0.0;
  double tau = 0.0;
  double mu_bar = 0.0;
  int replicates = 0;
  std::vector<ModelParams> samples;
  std::vector<std::string> warnings;
};

struct CalibrationReport {
  ModelParams params;
  PanelStatistics statistics;
  CouplingFit coupling_fit;
  VarianceFit variance_fit;
  GrowthMatch growth;
  std::optional<ParameterSpread> stddevs;
  std::vector<std::string> warnings;

  double intercept() const { return coupling_fit.intercept; }
};

/// G, then (sigma, tau), then mu_bar, each with the earlier ones held fixed.
/// `structure` supplies the rank weights and correlation matrix that define
/// the network and the noise; the panel supplies the trajectories.
inline CalibrationReport calibrate_with_structure(const ExportPanel& panel, PanelStatistics structure,
                                                  const InflationSchedule& inflation,
                                                  const CalibrationOptions& opt = {}) {
  panel.validate();
  if (inflation.span() < panel.years() - 1)
    throw SchemaError("inflation schedule shorter than the panel span");
  CalibrationReport report;
  report.statistics = std::move(structure);
  const auto points = compute_fg_points(panel, report.statistics, inflation);
  report.coupling_fit = calibrate_G(points, opt.top_fraction);
  const double G = report.coupling_fit.coupling;
  if (G < 0.0) report.warnings.push_back("regression slope is negative; coupling clamped to 0");
  const double coupling = std::max(0.0, G);
  report.variance_fit = fit_sigma_tau(panel, report.statistics, coupling, inflation, opt.variance);
  if (!report.variance_fit.converged)
    report.warnings.push_back("sigma/tau refinement did not converge; grid optimum kept");
  if (report.variance_fit.tau_at_bound)
    report.warnings.push_back("tau is at the edge of its search range; the variance curve does not pin it down");
  report.growth = calibrate_mu_bar(panel, report.statistics, coupling, report.variance_fit.sigma,
                                   report.variance_fit.tau, inflation, opt.mu_bar);
  report.params = ModelParams{coupling, report.variance_fit.sigma, report.variance_fit.tau, report.growth.mu_bar,
                              inflation};
  return report;
}

/// Full calibration with z and C estimated from the panel itself.
inline CalibrationReport calibrate(const ExportPanel& panel, const InflationSchedule& inflation,
                                   const CalibrationOptions& opt = {}) {
  panel.validate();
  return calibrate_with_structure(panel, compute_statistics(panel, opt.weight_window), inflation, opt);
}

/// Ground truth used to regenerate synthetic replicates of a panel.
struct PanelTemplate {
  Vector z;
  Matrix correlation;
  Vector initial;
  Index years = 0;
  int base_year = 0;
};

struct UncertaintyOptions {
  int replicates = 20;
  /// Re-estimate z and C from each synthetic panel instead of reusing the template's.
  bool reestimate_structure = false;
  std::uint64_t seed = 7;
  SimulationOptions simulation;
  CalibrationOptions calibration;
};

/// Standard deviations of the calibrated parameters across synthetic panels
/// simulated at `params` from the same initial conditions and duration.
inline ParameterSpread estimate_uncertainty(const ModelParams& params, const PanelTemplate& shape,
                                            const UncertaintyOptions& opt = {}) {
  if (opt.replicates < 1) throw ArgumentError("need at least one replicate");
  const CouplingNetwork network = build_coupling(shape.z, shape.correlation, params.coupling);
  const CorrelationFactor factor = factor_correlation(shape.correlation);
  SimulationOptions sim = opt.simulation;
  sim.horizon = static_cast<double>(shape.years - 1);
  sim.sample_interval = 1.0;
  sim.full_resolution = false;
  const auto ids = default_product_ids(shape.initial.size());

  ParameterSpread spread;
  spread.replicates = opt.replicates;
  spread.samples.resize(static_cast<std::size_t>(opt.replicates));
  // Replicates run serially; the mu_bar ensembles inside each one are parallel.
  for (int r = 0; r < opt.replicates; ++r) {
    const auto seed = derive_seed(opt.seed, static_cast<std::uint64_t>(r));
    const Trajectory traj = simulate(shape.initial, network, factor, params, sim, seed);
    CalibrationOptions copt = opt.calibration;
    copt.mu_bar.seed = derive_seed(seed, 0xC0FFEE);
    const ExportPanel panel = to_panel(traj, ids, shape.base_year);
    spread.samples[static_cast<std::size_t>(r)] =
        opt.reestimate_structure
            ? calibrate(panel, params.inflation, copt).params
            : calibrate_with_structure(panel, PanelStatistics{shape.z, {}, {}, shape.correlation}, params.inflation,
                                       copt)
                  .params;
  }
  if (opt.replicates < 2) {
    spread.warnings.push_back("a single replicate gives no spread estimate");
    return spread;
  }
  auto sd = [&](auto field) {
    double mean = 0.0;
    for (const auto& p : spread.samples) mean += field(p);
    mean /= static_cast<double>(spread.samples.size());
    double ss = 0.0;
    for (const auto& p : spread.samples) ss += (field(p) - mean) * (field(p) - mean);
    return std::sqrt(ss / static_cast<double>(spread.samples.size() - 1));
  };
  spread.coupling = sd([](const ModelParams& p) { return p.coupling; });
  spread.sigma = sd([](const ModelParams& p) { return p.sigma; });
  spread.tau = sd([](const ModelParams& p) { return p.tau; });
  spread.mu_bar = sd([](const ModelParams& p) { return p.mu_bar; });
  return spread;
}

}  // namespace exportnet
