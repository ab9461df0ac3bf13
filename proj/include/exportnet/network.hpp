#pragma once

#include "exportnet/core.hpp"
#include "exportnet/csv.hpp"

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace exportnet {

/// Value-transfer network between products.
///
/// transfer(i, j) is the rate at which value moves from product j to product i.
/// rate is the generator: off-diagonal equal to transfer, diagonal equal to minus
/// the total outflow of that product, so every column sums to zero.
struct CouplingNetwork {
  Matrix transfer;
  Matrix rate;
  double coupling = 0.0;

  Index size() const noexcept { return rate.rows(); }
};

/// transfer(i, j) = G * z_i * |c_ij| for i != j.
inline CouplingNetwork build_coupling(const Vector& z, const Matrix& correlation, double coupling) {
  const Index N = z.size();
  if (correlation.rows() != N || correlation.cols() != N)
    throw DimensionError("weight vector and correlation matrix disagree in size");
  if (!(coupling >= 0.0) || !std::isfinite(coupling))
    throw ArgumentError("coupling constant must be finite and non-negative");
  if (N > 0 && std::abs(z.sum() - 1.0) > 1e-9) throw ArgumentError("rank weights must sum to 1");

  CouplingNetwork net;
  net.coupling = coupling;
  net.transfer = coupling * (z.asDiagonal() * correlation.cwiseAbs());
  net.transfer.diagonal().setZero();
  net.rate = net.transfer;
  net.rate.diagonal() = -net.transfer.colwise().sum().transpose();
  return net;
}

/// max |A z|; zero when z is the stationary ranking of the network.
inline double kernel_residual(const CouplingNetwork& network, const Vector& z) {
  if (z.size() != network.size()) throw DimensionError("weight vector does not match network size");
  if (z.size() == 0) return 0.0;
  return (network.rate * z).cwiseAbs().maxCoeff();
}

/// Total off-diagonal transfer rate divided by the number of products.
inline double mean_link_weight(const CouplingNetwork& network) {
  if (network.size() == 0) return 0.0;
  return network.transfer.sum() / static_cast<double>(network.size());
}

/// Edge list `from_id,to_id,rate`, one row per ordered pair with nonzero rate.
inline void write_edge_list(std::ostream& out, const CouplingNetwork& network,
                            const std::vector<std::string>& ids) {
  if (static_cast<Index>(ids.size()) != network.size()) throw DimensionError("id count does not match network");
  out << "from_id,to_id,rate\n";
  for (Index j = 0; j < network.size(); ++j)
    for (Index i = 0; i < network.size(); ++i)
      if (i != j && network.transfer(i, j) != 0.0)
        out << ids[j] << ',' << ids[i] << ',' << csv::format_double(network.transfer(i, j)) << '\n';
}

}  // namespace exportnet
