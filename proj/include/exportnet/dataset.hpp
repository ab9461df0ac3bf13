#pragma once

#include "exportnet/core.hpp"
#include "exportnet/csv.hpp"
#include "exportnet/inflation.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace exportnet {

/// Yearly export values, one row per product and one column per year.
struct ExportPanel {
  Matrix values;
  std::vector<std::string> product_ids;
  int base_year = 0;

  Index products() const noexcept { return values.rows(); }
  Index years() const noexcept { return values.cols(); }
  int last_year() const noexcept { return base_year + static_cast<int>(values.cols()) - 1; }

  void validate() const {
    if (values.rows() < 2 || values.cols() < 3)
      throw DimensionError("panel needs at least 2 products and 3 years, got " +
                           std::to_string(values.rows()) + "x" + std::to_string(values.cols()));
    if (static_cast<Index>(product_ids.size()) != values.rows())
      throw DimensionError("product id count does not match panel rows");
    for (Index i = 0; i < values.rows(); ++i)
      for (Index n = 0; n < values.cols(); ++n)
        if (!(values(i, n) > 0.0) || !std::isfinite(values(i, n)))
          throw ArgumentError("non-positive value for product '" + product_ids[i] + "' in year " +
                              std::to_string(base_year + n));
  }
};

enum class IngestionPolicy {
  kReject,  ///< any non-positive value is an error
  kFloor,   ///< replace with the smallest positive value of that product
};

struct IngestionReport {
  std::vector<std::string> repairs;
};

/// Reads the canonical panel CSV: `product_id,year_<Y0>,...,year_<Yk>`.
inline ExportPanel parse_panel(std::istream& in, IngestionPolicy policy = IngestionPolicy::kReject,
                               IngestionReport* report = nullptr) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<int> years;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> row_lines;
  ExportPanel panel;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(line);
    if (years.empty()) {
      if (fields.size() < 2 || fields[0] != "product_id")
        throw ParseError("expected header starting with 'product_id'", line_no);
      for (std::size_t k = 1; k < fields.size(); ++k) {
        const auto f = fields[k];
        if (f.substr(0, 5) != "year_") throw ParseError("bad year column '" + std::string(f) + "'", line_no);
        const int year = csv::parse_int(f.substr(5), line_no);
        if (!years.empty() && year != years.back() + 1)
          throw ParseError("year columns must be consecutive", line_no);
        years.push_back(year);
      }
      continue;
    }
    if (fields.size() != years.size() + 1)
      throw ParseError("expected " + std::to_string(years.size() + 1) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    if (fields[0].empty()) throw ParseError("empty product_id", line_no);
    panel.product_ids.emplace_back(fields[0]);
    std::vector<double> row;
    row.reserve(years.size());
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const double v = csv::parse_double(fields[k], line_no);
      if (!std::isfinite(v)) throw ParseError("non-finite value", line_no);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
    row_lines.push_back(line_no);
  }
  if (years.empty()) throw ParseError("empty panel file", 0);

  panel.base_year = years.front();
  panel.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(years.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double floor_value = std::numeric_limits<double>::infinity();
    for (double v : rows[i])
      if (v > 0.0) floor_value = std::min(floor_value, v);
    for (std::size_t n = 0; n < years.size(); ++n) {
      double v = rows[i][n];
      if (v <= 0.0) {
        const std::string where = "product '" + panel.product_ids[i] + "' year " + std::to_string(years[n]);
        if (policy == IngestionPolicy::kReject || !std::isfinite(floor_value))
          throw ParseError("non-positive value for " + where, row_lines[i]);
        if (report) report->repairs.push_back(where + ": " + csv::format_double(v) + " -> " + csv::format_double(floor_value));
        v = floor_value;
      }
      panel.values(static_cast<Index>(i), static_cast<Index>(n)) = v;
    }
  }
  if (panel.products() < 2 || panel.years() < 3)
    throw DimensionError("panel needs at least 2 products and 3 years, got " +
                         std::to_string(panel.products()) + "x" + std::to_string(panel.years()));
  return panel;
}

inline ExportPanel load_panel(const std::filesystem::path& path, IngestionPolicy policy = IngestionPolicy::kReject,
                              IngestionReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open panel file " + path.string());
  return parse_panel(in, policy, report);
}

inline void write_panel(std::ostream& out, const ExportPanel& panel) {
  out << "product_id";
  for (Index n = 0; n < panel.years(); ++n) out << ",year_" << panel.base_year + n;
  out << '\n';
  for (Index i = 0; i < panel.products(); ++i) {
    out << panel.product_ids[i];
    for (Index n = 0; n < panel.years(); ++n) out << ',' << csv::format_double(panel.values(i, n));
    out << '\n';
  }
}

/// Share of each product in the yearly total, averaged over the last `window` years.
inline Vector compute_rank_weights(const ExportPanel& panel, Index window = 10) {
  if (window < 1 || window > panel.years())
    throw ArgumentError("rank-weight window " + std::to_string(window) + " outside [1, " +
                        std::to_string(panel.years()) + "]");
  Vector z = Vector::Zero(panel.products());
  for (Index n = panel.years() - window; n < panel.years(); ++n) {
    const auto column = panel.values.col(n);
    z += column / column.sum();
  }
  z /= static_cast<double>(window);
  return z / z.sum();
}

struct Correlators {
  Matrix returns;             ///< R(i, n) = ln(Z(i, n+1) / Z(i, n)), N x (Y-1)
  Matrix normalized_returns;  ///< zero mean, unit variance per row, divisor Y-1
  Matrix correlation;         ///< (1/(Y-1)) r r^T, unit diagonal
};

inline Correlators compute_correlators(const ExportPanel& panel) {
  const Index N = panel.products();
  const Index T = panel.years() - 1;
  if (T < 1) throw DimensionError("need at least 2 years for returns");
  if ((panel.values.array() <= 0.0).any()) throw ArgumentError("panel contains non-positive values");
  Correlators out;
  const Matrix logs = panel.values.array().log().matrix();
  out.returns = logs.rightCols(T) - logs.leftCols(T);
  out.normalized_returns.resize(N, T);
  for (Index i = 0; i < N; ++i) {
    const auto row = out.returns.row(i);
    const double mean = row.mean();
    const double centered_var = (row.array() - mean).square().sum() / static_cast<double>(T);
    if (!(centered_var > 1e-24 * std::max(1.0, mean * mean)))
      throw DegenerateProductError(panel.product_ids.empty() ? std::to_string(i) : panel.product_ids[i]);
    out.normalized_returns.row(i) = (row.array() - mean) / std::sqrt(centered_var);
  }
  out.correlation = out.normalized_returns * out.normalized_returns.transpose() / static_cast<double>(T);
  out.correlation = 0.5 * (out.correlation + out.correlation.transpose()).eval();
  out.correlation.diagonal().setOnes();
  return out;
}

/// Everything the model consumes from a panel.
struct PanelStatistics {
  Vector z;
  Matrix returns;
  Matrix normalized_returns;
  Matrix correlation;
};

inline PanelStatistics compute_statistics(const ExportPanel& panel, Index window = 10) {
  auto corr = compute_correlators(panel);
  return PanelStatistics{compute_rank_weights(panel, window), std::move(corr.returns),
                         std::move(corr.normalized_returns), std::move(corr.correlation)};
}

}  // namespace exportnet
