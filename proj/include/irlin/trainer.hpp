#pragma once

#include <chrono>
#include <limits>
#include <string>
#include <vector>

#include "irlin/em.hpp"
#include "irlin/instrumentation.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/missing.hpp"
#include "irlin/optimize.hpp"
#include "irlin/trajectory.hpp"

namespace irlin {

enum class TrainMode { Full, Composition, Connected, EmBfs };

inline std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Full: return "full";
    case TrainMode::Composition: return "composition";
    case TrainMode::Connected: return "connected";
    case TrainMode::EmBfs: return "em-bfs";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& name) {
  if (name == "full") return TrainMode::Full;
  if (name == "composition") return TrainMode::Composition;
  if (name == "connected") return TrainMode::Connected;
  if (name == "em-bfs" || name == "em_bfs") return TrainMode::EmBfs;
  throw ValidationError("unknown train mode '" + name + "'");
}

struct TrainConfig {
  TrainMode mode = TrainMode::Full;
  Theta theta0;                 // defaults to zeros when empty
  int max_iters = 500;
  double grad_tol = 1e-5;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  double init_step = 1.0;
  int max_backtracks = 60;
  int bfs_depth = 5;            // EM-BFS-H depth
  int em_outer_iters = 50;
  std::uint64_t seed = 0;       // recorded for provenance; training is deterministic
};

struct TrainIterRecord {
  int iter;
  double loglik;
  double grad_inf;
  double step;
};

struct TrainReport {
  std::string mode;
  Theta theta_hat;
  int iterations = 0;
  long evals = 0;
  double final_loglik = 0.0;
  bool converged = false;
  bool line_search_failed = false;
  int excluded = 0;
  int em_outer_iterations = 0;
  double seconds_total = 0.0;
  double seconds_per_eval = 0.0;     // log-likelihood + gradient evaluation
  double seconds_factorize = 0.0;    // accumulated inside the evaluations
  std::vector<TrainIterRecord> trace;
  std::vector<std::string> warnings;
};

namespace detail {

inline OptimizeConfig optimizer_config(const TrainConfig& config) {
  OptimizeConfig out;
  out.max_iters = config.max_iters;
  out.grad_tol = config.grad_tol;
  out.armijo_c = config.armijo_c;
  out.shrink = config.shrink;
  out.init_step = config.init_step;
  out.max_backtracks = config.max_backtracks;
  return out;
}

}  // namespace detail

/// Maximum-likelihood training in one of four modes. Gradient ascent with
/// backtracking line search on the mode's objective; stops when
/// ||grad||_inf < grad_tol or after max_iters.
inline TrainReport train(const Dataset& dataset, const Mdp& mdp, const TrainConfig& config) {
  if (dataset.empty()) throw ValidationError("train: dataset is empty");
  Theta theta0 = config.theta0;
  if (theta0.size() == 0) theta0 = Theta::Zero(mdp.n_features());
  mdp.check_theta(theta0);
  if (config.mode == TrainMode::Full && has_gaps(dataset))
    throw ValidationError("train: full mode requires a dataset without gaps");
  for (std::size_t i = 0; i < dataset.size(); ++i) validate_trajectory(mdp, dataset[i], i);

  TrainReport report;
  report.mode = to_string(config.mode);
  const auto t_start = std::chrono::steady_clock::now();
  const double factorize_before = solve_counters().factorize_seconds;

  if (config.mode == TrainMode::EmBfs) {
    const EmReport em = em_train(dataset, mdp, config.bfs_depth, theta0,
                                 config.em_outer_iters, detail::optimizer_config(config));
    report.theta_hat = em.theta;
    report.em_outer_iterations = em.outer_iterations;
    report.iterations = em.outer_iterations;
    report.evals = em.evals;
    report.converged = em.converged;
    report.final_loglik = em.restricted_loglik.empty()
                              ? em.final_surrogate
                              : em_restricted_loglik(
                                    dataset, mdp, em.theta,
                                    enumerate_gap_paths(mdp, dataset, config.bfs_depth));
    if (em.omitted_gaps > 0)
      report.warnings.push_back(std::to_string(em.omitted_gaps) +
                                " gap(s) had no enumerable path and were omitted");
    for (std::size_t i = 0; i < em.restricted_loglik.size(); ++i)
      report.trace.push_back({static_cast<int>(i), em.restricted_loglik[i], 0.0, 0.0});
  } else {
    long evals = 0;
    double eval_seconds = 0.0;
    int last_excluded = 0;
    const Objective objective = [&](const Theta& theta) -> ObjectiveValue {
      const auto t0 = std::chrono::steady_clock::now();
      ObjectiveValue out;
      try {
        LogLik l;
        switch (config.mode) {
          case TrainMode::Full: l = dataset_loglik(dataset, mdp, theta); break;
          case TrainMode::Composition: l = incomplete_dataset_loglik(dataset, mdp, theta); break;
          case TrainMode::Connected: l = connected_dataset_loglik(dataset, mdp, theta); break;
          default: break;
        }
        last_excluded = l.excluded;
        out = {l.value, std::move(l.grad)};
      } catch (const NumericalError&) {
        out = {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
      }
      ++evals;
      eval_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return out;
    };
    const OptimizeResult opt = maximize(objective, theta0, detail::optimizer_config(config));
    report.theta_hat = opt.theta;
    report.iterations = opt.iterations;
    report.evals = opt.evals;
    report.final_loglik = opt.value;
    report.converged = opt.converged;
    report.line_search_failed = opt.line_search_failed;
    report.excluded = last_excluded;
    if (opt.line_search_failed)
      report.warnings.push_back("line search failed; returning the best iterate");
    for (const OptimizeTracePoint& p : opt.trace)
      report.trace.push_back({p.iter, p.value, p.grad_inf, p.step});
    report.seconds_per_eval = evals > 0 ? eval_seconds / static_cast<double>(evals) : 0.0;
  }

  report.seconds_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  report.seconds_factorize = solve_counters().factorize_seconds - factorize_before;
  return report;
}

/// Log-likelihood of a no-missing dataset under theta (evaluation metric).
inline double evaluate(const Theta& theta, const Dataset& full_dataset, const Mdp& mdp) {
  if (has_gaps(full_dataset))
    throw ValidationError("evaluate expects a dataset without gaps");
  return dataset_loglik(full_dataset, mdp, theta).value;
}

}  // namespace irlin
