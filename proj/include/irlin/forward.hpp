#pragma once

#include <chrono>
#include <cmath>
#include <iostream>
#include <memory>
#include <sstream>
#include <vector>

#include <Eigen/SparseLU>

#include "irlin/instrumentation.hpp"
#include "irlin/mdp.hpp"
#include "irlin/types.hpp"

namespace irlin {

inline constexpr double kResidualTol = 1e-10;

/// Sparse LU factors of I - X for some nonnegative system matrix X (M or Q0).
/// Factor once, then solve any number of right-hand-side batches. Read-only
/// after construction; concurrent solves against one factorization are safe.
class LuFactors {
 public:
  using Solver = Eigen::SparseLU<SparseColMat, Eigen::COLAMDOrdering<int>>;

  LuFactors(std::unique_ptr<Solver> lu, SparseColMat system)
      : lu_(std::move(lu)), system_(std::move(system)) {}

  int size() const { return static_cast<int>(system_.rows()); }
  const SparseColMat& system() const { return system_; }  // I - X

  /// Solves (I - X) out = rhs with a backward-error gate:
  /// ||rhs - (I-X) out||_inf <= kResidualTol * (1 + ||rhs||_inf + ||out||_inf).
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    ++solve_counters().solve_batches;
    Eigen::MatrixXd out = lu_->solve(rhs);
    const double rhs_norm = rhs.size() == 0 ? 0.0 : rhs.cwiseAbs().maxCoeff();
    const double out_norm = out.size() == 0 ? 0.0 : out.cwiseAbs().maxCoeff();
    const double residual =
        rhs.size() == 0 ? 0.0 : (rhs - system_ * out).cwiseAbs().maxCoeff();
    if (!(residual <= kResidualTol * (1.0 + rhs_norm + out_norm))) {
      std::ostringstream msg;
      msg << "linear solve residual " << residual << " exceeds tolerance "
          << kResidualTol * (1.0 + rhs_norm + out_norm)
          << "; I-M is likely near-singular (Theorem-style invertibility conditions violated)";
      throw NumericalError(msg.str());
    }
    return out;
  }

 private:
  std::unique_ptr<Solver> lu_;
  SparseColMat system_;
};

namespace detail {

inline LuFactors factorize_system(SparseColMat x) {
  const auto start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(x.rows());
  SparseColMat system(n, n);
  system.setIdentity();
  system -= x;
  system.makeCompressed();
  auto lu = std::make_unique<LuFactors::Solver>();
  lu->isSymmetric(false);
  lu->analyzePattern(system);
  lu->factorize(system);
  if (lu->info() != Eigen::Success)
    throw NumericalError(
        "I-M singular; Theorem 1 conditions likely violated (" + lu->lastErrorMessage() + ")");
  ++solve_counters().factorizations;
  solve_counters().factorize_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return LuFactors(std::move(lu), std::move(system));
}

}  // namespace detail

/// LU factors of I - M, reusable across all T+1 right-hand-side batches.
inline LuFactors factorize(const SparseRowMat& m) {
  return detail::factorize_system(SparseColMat(m));
}

inline LuFactors factorize(const SparseColMat& x) {
  return detail::factorize_system(x);
}

/// Destination indicator matrix B: B_{s,n} = 1 iff s is in group n's set.
inline Eigen::MatrixXd destination_rhs(const Mdp& mdp) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(mdp.n_states(), mdp.n_groups());
  for (int g = 0; g < mdp.n_groups(); ++g)
    for (StateId s : mdp.group(g).states) b(s, g) = 1.0;
  return b;
}

/// Z = (I-M)^{-1} B, one column per destination group.
inline Eigen::MatrixXd solve_z(const LuFactors& factors, const Eigen::MatrixXd& b) {
  return factors.solve(b);
}

/// d Z / d theta_t = (I-M)^{-1} (M o F^t) Z for each t, reusing the
/// factorization. The Hadamard products are assembled in one sweep over M.
inline std::vector<Eigen::MatrixXd> jacobian_z(const LuFactors& factors,
                                               const SparseRowMat& m, const Mdp& mdp,
                                               const Eigen::MatrixXd& z) {
  const TransitionTable& table = mdp.transitions();
  const int n = mdp.n_states();
  const int n_features = mdp.n_features();
  const auto cols = z.cols();
  std::vector<Eigen::MatrixXd> h(n_features, Eigen::MatrixXd::Zero(n, cols));
  for (StateId s = 0; s < n; ++s) {
    std::int32_t k = table.row_ptr[s];
    for (SparseRowMat::InnerIterator it(m, s); it; ++it, ++k) {
      const double mv = it.value();
      const auto zrow = z.row(it.col());
      const double* f = table.feat.data() + static_cast<std::size_t>(k) * n_features;
      for (int t = 0; t < n_features; ++t)
        if (f[t] != 0.0) h[t].row(s) += mv * f[t] * zrow;
    }
  }
  std::vector<Eigen::MatrixXd> jac;
  jac.reserve(n_features);
  for (int t = 0; t < n_features; ++t) jac.push_back(factors.solve(h[t]));
  return jac;
}

/// Z (one column per destination group) together with its Jacobian,
/// J[t] = dZ/dtheta_t, and the M matrix they were solved against.
struct ForwardSolution {
  SparseRowMat m;
  Eigen::MatrixXd z;
  std::vector<Eigen::MatrixXd> jacobian;  // n_features matrices, |S| x n_groups
};

/// Builds M, factors I-M once, and solves the T+1 batches of Eq-style
/// systems for Z and its Jacobian.
inline ForwardSolution solve_forward(const Mdp& mdp, const Theta& theta) {
  ForwardSolution sol;
  sol.m = build_m(mdp, theta);
  const LuFactors factors = factorize(sol.m);
  sol.z = solve_z(factors, destination_rhs(mdp));
  // z is a sum of nonnegative path weights; a clearly negative entry means
  // the invertibility conditions fail at this theta.
  if (sol.z.size() > 0 && sol.z.minCoeff() < -1e-9)
    throw NumericalError(
        "z has negative entries (min " + std::to_string(sol.z.minCoeff()) +
        "); Theorem 1 conditions are violated at this theta");
  sol.jacobian = jacobian_z(factors, sol.m, mdp, sol.z);
  return sol;
}

struct ValueIterationResult {
  Eigen::VectorXd z;
  int iterations = 0;
};

struct ValueIterationMatrixResult {
  Eigen::MatrixXd z;
  int iterations = 0;
};

namespace detail {

inline void warn_if_conditions_fail(const SparseRowMat& m) {
  double tau = 0.0;
  for (int s = 0; s < m.rows(); ++s) {
    double row = 0.0;
    for (SparseRowMat::InnerIterator it(m, s); it; ++it) row += it.value();
    tau = std::max(tau, row);
  }
  if (tau < 1.0) return;
  // Condition (ii) fails; check (i) on M's support.
  const int n = static_cast<int>(m.rows());
  std::vector<int> in_degree(n, 0);
  for (int s = 0; s < n; ++s)
    for (SparseRowMat::InnerIterator it(m, s); it; ++it) ++in_degree[it.col()];
  std::queue<int> ready;
  for (int s = 0; s < n; ++s)
    if (in_degree[s] == 0) ready.push(s);
  int processed = 0;
  while (!ready.empty()) {
    const int s = ready.front();
    ready.pop();
    ++processed;
    for (SparseRowMat::InnerIterator it(m, s); it; ++it)
      if (--in_degree[it.col()] == 0) ready.push(static_cast<int>(it.col()));
  }
  if (processed != n)
    std::cerr << "irlin: warning: value iteration started with neither invertibility "
                 "condition holding (tau="
              << tau << ", cyclic support); convergence is not guaranteed\n";
}

template <typename Mat>
Mat value_iteration_impl(const SparseRowMat& m, const Mat& b, const Mat& z0, double eps,
                         int k_max, int& iterations) {
  if (eps <= 0.0) throw ValidationError("value iteration tolerance must be positive");
  if (k_max < 1) throw ValidationError("value iteration needs k_max >= 1");
  warn_if_conditions_fail(m);
  Mat z = z0;
  double diff = 0.0;
  for (int k = 1; k <= k_max; ++k) {
    Mat next = m * z + b;
    diff = z.size() == 0 ? 0.0 : (next - z).cwiseAbs().maxCoeff();
    z.swap(next);
    if (diff < eps) {
      iterations = k;
      return z;
    }
  }
  std::ostringstream msg;
  msg << "value iteration did not converge in " << k_max
      << " iterations; last residual " << diff;
  throw NumericalError(msg.str());
}

}  // namespace detail

/// z^{k+1} <- M z^k + b until ||z^{k+1} - z^k||_inf < eps. Warns when
/// neither invertibility condition holds.
inline ValueIterationResult value_iteration(const SparseRowMat& m, const Eigen::VectorXd& b,
                                            const Eigen::VectorXd& z0, double eps,
                                            int k_max) {
  ValueIterationResult result;
  result.z = detail::value_iteration_impl(m, b, z0, eps, k_max, result.iterations);
  return result;
}

inline ValueIterationResult value_iteration(const SparseRowMat& m,
                                            const Eigen::VectorXd& b, double eps = 1e-10) {
  return value_iteration(m, b, b, eps, 10 * static_cast<int>(m.rows()) + 1000);
}

inline ValueIterationMatrixResult value_iteration(const SparseRowMat& m,
                                                  const Eigen::MatrixXd& b,
                                                  const Eigen::MatrixXd& z0, double eps,
                                                  int k_max) {
  ValueIterationMatrixResult result;
  result.z = detail::value_iteration_impl(m, b, z0, eps, k_max, result.iterations);
  return result;
}

/// Iteration estimate of Proposition-2 form: ceil(ln eps / ln tau).
inline int iteration_bound(double tau, double eps) {
  if (!(tau > 0.0 && tau < 1.0))
    throw ValidationError("iteration bound inapplicable: tau must lie in (0,1), got " +
                          std::to_string(tau));
  if (!(eps > 0.0 && eps < 1.0))
    throw ValidationError("iteration bound needs eps in (0,1), got " + std::to_string(eps));
  return static_cast<int>(std::ceil(std::log(eps) / std::log(tau)));
}

/// Value-iteration route to the same ForwardSolution (baseline for timing
/// comparisons). `iterations` totals the sweeps across all T+1 systems.
inline ForwardSolution solve_forward_vi(const Mdp& mdp, const Theta& theta,
                                        double eps, int k_max, long* iterations = nullptr) {
  ForwardSolution sol;
  sol.m = build_m(mdp, theta);
  const Eigen::MatrixXd b = destination_rhs(mdp);
  long total = 0;
  auto zres = value_iteration(sol.m, b, b, eps, k_max);
  sol.z = std::move(zres.z);
  total += zres.iterations;

  const TransitionTable& table = mdp.transitions();
  const int n_features = mdp.n_features();
  std::vector<Eigen::MatrixXd> h(n_features,
                                 Eigen::MatrixXd::Zero(mdp.n_states(), sol.z.cols()));
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    std::int32_t k = table.row_ptr[s];
    for (SparseRowMat::InnerIterator it(sol.m, s); it; ++it, ++k) {
      const double* f = table.feat.data() + static_cast<std::size_t>(k) * n_features;
      for (int t = 0; t < n_features; ++t)
        if (f[t] != 0.0) h[t].row(s) += it.value() * f[t] * sol.z.row(it.col());
    }
  }
  sol.jacobian.reserve(n_features);
  for (int t = 0; t < n_features; ++t) {
    auto jres = value_iteration(sol.m, h[t], h[t], eps, k_max);
    sol.jacobian.push_back(std::move(jres.z));
    total += jres.iterations;
  }
  if (iterations) *iterations = total;
  return sol;
}

}  // namespace irlin
