#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "irlin/types.hpp"

namespace irlin {

/// Backtracking gradient ascent. The objective returns the value and its
/// gradient; evaluations that fail numerically should come back as -inf.
struct OptimizeConfig {
  int max_iters = 500;
  double grad_tol = 1e-5;      // stop when ||grad||_inf < grad_tol
  double armijo_c = 1e-4;
  double shrink = 0.5;
  double init_step = 1.0;
  int max_backtracks = 60;
  double theta_tol = 0.0;      // optional extra stop on ||step||_inf
};

struct ObjectiveValue {
  double value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad;
};

using Objective = std::function<ObjectiveValue(const Theta&)>;

struct OptimizeTracePoint {
  int iter;
  double value;
  double grad_inf;
  double step;
};

struct OptimizeResult {
  Theta theta;
  double value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad;
  int iterations = 0;
  long evals = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::vector<OptimizeTracePoint> trace;
};

/// Maximizes `objective` from `theta0`. Armijo condition on the ascent
/// direction g: f(theta + a g) >= f(theta) + c a g'g. The first line search
/// starts at init_step; later ones warm-start at min(init_step, 4x the last
/// accepted step) to keep evaluation counts proportionate.
inline OptimizeResult maximize(const Objective& objective, const Theta& theta0,
                               const OptimizeConfig& config = {}) {
  if (config.max_iters < 1) throw ValidationError("optimizer needs max_iters >= 1");
  if (!(config.grad_tol > 0.0)) throw ValidationError("optimizer needs grad_tol > 0");

  OptimizeResult result;
  result.theta = theta0;
  ObjectiveValue current = objective(theta0);
  ++result.evals;
  if (!std::isfinite(current.value))
    throw ValidationError(
        "objective is not finite at the initial parameters; pick a theta0 for which the "
        "forward systems are solvable (value=" +
        std::to_string(current.value) + ")");
  result.value = current.value;
  result.grad = current.grad;
  result.trace.push_back({0, current.value, current.grad.cwiseAbs().maxCoeff(), 0.0});

  double last_step = config.init_step;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const double grad_inf = current.grad.cwiseAbs().maxCoeff();
    if (grad_inf < config.grad_tol) {
      result.converged = true;
      break;
    }
    const double gg = current.grad.squaredNorm();
    double step = (iter == 1) ? config.init_step
                              : std::min(config.init_step, 4.0 * last_step);
    bool accepted = false;
    ObjectiveValue trial;
    Theta trial_theta;
    for (int bt = 0; bt < config.max_backtracks; ++bt) {
      trial_theta = result.theta + step * current.grad;
      trial = objective(trial_theta);
      ++result.evals;
      if (std::isfinite(trial.value) &&
          trial.value >= current.value + config.armijo_c * step * gg) {
        accepted = true;
        break;
      }
      step *= config.shrink;
    }
    if (!accepted) {
      result.line_search_failed = true;
      break;
    }
    last_step = step;
    result.theta = trial_theta;
    current = trial;
    result.value = current.value;
    result.grad = current.grad;
    result.iterations = iter;
    result.trace.push_back({iter, current.value, current.grad.cwiseAbs().maxCoeff(), step});
    if (config.theta_tol > 0.0 &&
        (step * current.grad.cwiseAbs().maxCoeff()) < config.theta_tol)
      break;
  }
  if (!result.converged && result.grad.cwiseAbs().maxCoeff() < config.grad_tol)
    result.converged = true;
  return result;
}

}  // namespace irlin
