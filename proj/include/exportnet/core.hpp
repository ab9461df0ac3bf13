#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace exportnet {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line()` is 1-based; 0 when the whole file is at fault.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A product whose return series has zero variance; its normalized return is undefined.
class DegenerateProductError : public Error {
 public:
  DegenerateProductError(const std::string& product)
      : Error("product '" + product + "' has zero return variance"), product_(product) {}
  const std::string& product() const noexcept { return product_; }

 private:
  std::string product_;
};

class NumericalBlowupError : public Error {
 public:
  NumericalBlowupError(double t, Index product)
      : Error("non-finite value at t=" + std::to_string(t) + " for product index " +
              std::to_string(product)),
        t_(t),
        product_(product) {}
  double time() const noexcept { return t_; }
  Index product() const noexcept { return product_; }

 private:
  double t_;
  Index product_;
};

class SingularFitError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace exportnet
