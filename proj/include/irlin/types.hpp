#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace irlin {

inline constexpr const char* kVersion = "0.1.0";

/// States and actions are dense 0-based indices. Actions are identified by
/// their position in the per-state action list.
using StateId = std::int32_t;
using ActionId = std::int32_t;

/// Reward parameter vector, one entry per feature.
using Theta = Eigen::VectorXd;

using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseColMat = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// Malformed inputs, contract violations, unusable configuration.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Solver breakdowns: singular systems, overflow, residuals out of tolerance,
/// iteration budgets exhausted.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace irlin
