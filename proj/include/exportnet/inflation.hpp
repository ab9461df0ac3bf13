#pragma once

#include "exportnet/core.hpp"
#include "exportnet/csv.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>

namespace exportnet {

/// What I(t) does past the end of the tabulated schedule.
enum class InflationExtension {
  kMean,  ///< historical mean rate
  kZero,  ///< real-terms runs
};

/// Yearly step-function inflation. rates[k] applies on the interval (k, k+1],
/// with t = 0 the panel's base year.
struct InflationSchedule {
  Vector rates;
  InflationExtension extension = InflationExtension::kMean;

  static InflationSchedule zero(Index years) {
    return InflationSchedule{Vector::Zero(years), InflationExtension::kZero};
  }

  Index span() const noexcept { return rates.size(); }

  double mean() const { return rates.size() ? rates.mean() : 0.0; }

  double beyond_rate() const { return extension == InflationExtension::kMean ? mean() : 0.0; }

  /// I(t). Times at or before 0 use the first interval.
  double rate_at(double t) const {
    if (rates.size() == 0) return 0.0;
    if (t <= 0.0) return rates[0];
    const double k = std::ceil(t) - 1.0;
    if (k >= static_cast<double>(rates.size())) return beyond_rate();
    return rates[static_cast<Index>(k)];
  }

  /// Exact integral of the step function over [t0, t1].
  double integrate(double t0, double t1) const {
    if (t1 < t0) return -integrate(t1, t0);
    double total = 0.0;
    const double span_end = static_cast<double>(rates.size());
    if (t0 < 0.0) {
      const double head_end = std::min(t1, 0.0);
      total += (head_end - t0) * (rates.size() ? rates[0] : 0.0);
      t0 = head_end;
    }
    for (Index k = static_cast<Index>(std::floor(t0)); k < rates.size() && static_cast<double>(k) < t1; ++k) {
      const double lo = std::max(t0, static_cast<double>(k));
      const double hi = std::min(t1, static_cast<double>(k + 1));
      if (hi > lo) total += (hi - lo) * rates[k];
    }
    if (t1 > span_end) total += (t1 - std::max(t0, span_end)) * beyond_rate();
    return total;
  }

  InflationSchedule shifted(double delta) const {
    InflationSchedule out = *this;
    out.rates.array() += delta;
    return out;
  }
};

/// Reads `year,rate_percent` rows. The schedule must cover every year in
/// (base_year, base_year + intervals]; extra rows are ignored.
inline InflationSchedule parse_inflation(std::istream& in, int base_year, Index intervals) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::map<int, double> by_year;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(line);
    if (!header_seen) {
      if (fields.size() != 2 || fields[0] != "year" || fields[1] != "rate_percent")
        throw ParseError("expected header 'year,rate_percent'", line_no);
      header_seen = true;
      continue;
    }
    if (fields.size() != 2) throw ParseError("expected 2 fields", line_no);
    const int year = csv::parse_int(fields[0], line_no);
    const double pct = csv::parse_double(fields[1], line_no);
    if (!std::isfinite(pct)) throw ParseError("non-finite rate", line_no);
    if (!by_year.emplace(year, pct / 100.0).second)
      throw ParseError("duplicate year " + std::to_string(year), line_no);
  }
  if (!header_seen) throw ParseError("empty inflation file", 0);
  InflationSchedule schedule;
  schedule.rates.resize(intervals);
  for (Index k = 0; k < intervals; ++k) {
    const int year = base_year + static_cast<int>(k) + 1;
    const auto it = by_year.find(year);
    if (it == by_year.end()) throw SchemaError("inflation schedule has no entry for year " + std::to_string(year));
    schedule.rates[k] = it->second;
  }
  return schedule;
}

inline InflationSchedule load_inflation(const std::filesystem::path& path, int base_year, Index intervals) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open inflation file " + path.string());
  return parse_inflation(in, base_year, intervals);
}

}  // namespace exportnet
