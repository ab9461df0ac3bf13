#pragma once

#include "exportnet/core.hpp"
#include "exportnet/inflation.hpp"

#include <cmath>

namespace exportnet {

/// The four model scalars plus the inflation schedule.
struct ModelParams {
  double coupling = 0.0;  ///< G, 1/year
  double sigma = 0.0;     ///< noise amplitude, 1/sqrt(year)
  double tau = 1.0;       ///< noise memory time, year
  double mu_bar = 0.0;    ///< real deterministic growth rate, 1/year
  InflationSchedule inflation;

  void validate() const {
    if (!(coupling >= 0.0) || !std::isfinite(coupling)) throw ArgumentError("coupling must be >= 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be >= 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("tau must be > 0");
    if (!std::isfinite(mu_bar)) throw ArgumentError("mu_bar must be finite");
  }

  /// Stationary standard deviation of each noise component, sigma / sqrt(tau).
  double noise_scale() const { return sigma / std::sqrt(tau); }
};

/// Calibrated values reported for the 1962-2000 export panel.
inline ModelParams reference_params(InflationSchedule inflation = {}) {
  return ModelParams{0.051, 0.098, 0.8, 0.041, std::move(inflation)};
}

/// Yearly CPI inflation 1963-2000, in percent.
inline constexpr double kReferenceInflationPercent[] = {
    1.3, 1.3, 1.6, 2.9, 3.1, 4.2,  5.5,  5.7, 4.4,  3.2, 6.2, 11.0, 9.1, 5.8, 6.5, 7.6, 11.3, 13.5, 10.3,
    6.2, 3.2, 4.3, 3.6, 1.9, 3.6, 4.1, 4.8, 5.4, 4.2, 3.0, 3.0, 2.6, 2.8, 3.0, 2.3, 1.6, 2.2, 3.4};

inline InflationSchedule reference_inflation() {
  constexpr Index n = sizeof(kReferenceInflationPercent) / sizeof(double);
  InflationSchedule s;
  s.rates.resize(n);
  for (Index k = 0; k < n; ++k) s.rates[k] = kReferenceInflationPercent[k] / 100.0;
  return s;
}

}  // namespace exportnet
