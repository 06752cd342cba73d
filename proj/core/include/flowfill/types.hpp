#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace flowfill {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// 1 = missing, 0 = observed.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base of everything the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or an inconsistent request (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed, inconsistent or unreadable data and artifacts (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced during evaluation or training (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowfill
