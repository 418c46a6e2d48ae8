#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "irlin/forward.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/missing.hpp"
#include "irlin/optimize.hpp"
#include "irlin/trajectory.hpp"

namespace irlin {

inline constexpr std::size_t kMaxBfsPaths = 100000;
inline constexpr std::size_t kMaxBfsExpansions = 5000000;

/// All u -> v state sequences with at most `depth` transitions, in
/// breadth-first order with successors visited in ascending state id.
/// States may repeat (no visited marking); a sequence that reaches v is
/// recorded and still extended. Hard-capped at kMaxBfsPaths results.
inline std::vector<std::vector<StateId>> bfs_paths(const Mdp& mdp, StateId u, StateId v,
                                                   int depth,
                                                   std::size_t max_paths = kMaxBfsPaths) {
  if (depth < 1) throw ValidationError("bfs_paths needs depth >= 1");
  const TransitionTable& table = mdp.transitions();
  std::vector<std::vector<StateId>> found;
  std::deque<std::vector<StateId>> queue;
  queue.push_back({u});
  std::size_t expansions = 0;
  while (!queue.empty()) {
    std::vector<StateId> path = std::move(queue.front());
    queue.pop_front();
    if (path.size() > 1 && path.back() == v) {
      found.push_back(path);
      if (found.size() > max_paths)
        throw ValidationError("path enumeration exceeded " + std::to_string(max_paths) +
                              " paths for pair (" + std::to_string(u) + "," +
                              std::to_string(v) + "); reduce the BFS depth");
    }
    if (static_cast<int>(path.size()) - 1 >= depth) continue;
    const StateId s = path.back();
    for (std::int32_t k = table.row_ptr[s]; k < table.row_ptr[s + 1]; ++k) {
      if (table.prob_sum[k] <= 0.0) continue;
      if (++expansions > kMaxBfsExpansions)
        throw ValidationError("BFS expansion budget exceeded for pair (" +
                              std::to_string(u) + "," + std::to_string(v) +
                              "); reduce the BFS depth");
      std::vector<StateId> next = path;
      next.push_back(table.col[k]);
      queue.push_back(std::move(next));
    }
  }
  return found;
}

/// Enumerated completions of one gap with their posterior weights under the
/// current parameter estimate.
struct GapPathSet {
  std::size_t traj = 0;
  int group = 0;
  MissingPair pair{0, 0, 0};
  std::vector<std::vector<StateId>> paths;
  Eigen::VectorXd weights;
  bool omitted = false;  // no path, or all enumerated paths have probability 0
};

namespace detail {

/// ln of the policy walk probability of step s -> s_next, with its gradient:
/// walk = sum_a p(s_next|a,s) P(a|s).
struct WalkTerm {
  bool ok = false;
  double prob = 0.0;
  Eigen::VectorXd grad;  // d walk / d theta
};

inline WalkTerm walk_step(const Mdp& mdp, const Theta& theta,
                          const Eigen::Ref<const Eigen::VectorXd>& z,
                          const Eigen::Ref<const Eigen::MatrixXd>& jac, StateId s,
                          StateId s_next, bool with_grad) {
  WalkTerm out;
  if (mdp.is_absorbing(s) || !(z[s] > 0.0)) return out;
  out.prob = 0.0;
  if (with_grad) out.grad = Eigen::VectorXd::Zero(mdp.n_features());
  for (ActionId a = 0; a < static_cast<ActionId>(mdp.actions(s).size()); ++a) {
    double p_reach = 0.0;
    for (const Successor& succ : mdp.actions(s)[a].successors)
      if (succ.state == s_next) p_reach += succ.prob;
    if (p_reach == 0.0) continue;
    out.prob += p_reach * action_prob(mdp, theta, s, a, z);
    if (with_grad) out.grad += p_reach * action_prob_grad(mdp, theta, s, a, z, jac);
  }
  out.ok = out.prob > 0.0;
  return out;
}

inline double path_prob(const Mdp& mdp, const Theta& theta,
                        const Eigen::Ref<const Eigen::VectorXd>& z,
                        const std::vector<StateId>& path) {
  double prob = 1.0;
  const Eigen::MatrixXd no_jac;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const WalkTerm term = walk_step(mdp, theta, z, no_jac, path[i], path[i + 1], false);
    if (!term.ok) return 0.0;
    prob *= term.prob;
  }
  return prob;
}

}  // namespace detail

/// Enumerates the path set of every gap in the dataset once (the sets depend
/// only on the kernel support and H, not on theta).
inline std::vector<GapPathSet> enumerate_gap_paths(const Mdp& mdp, const Dataset& dataset,
                                                   int depth) {
  const std::vector<int> groups = group_trajectories(mdp, dataset);
  std::vector<GapPathSet> sets;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const Segment& seg : dataset[i].segments) {
      if (const auto* gap = std::get_if<Gap>(&seg)) {
        GapPathSet set;
        set.traj = i;
        set.group = groups[i];
        set.pair = {gap->from, gap->to, groups[i]};
        set.paths = bfs_paths(mdp, gap->from, gap->to, depth);
        set.omitted = set.paths.empty();
        sets.push_back(std::move(set));
      }
    }
  }
  return sets;
}

/// E step: posterior weight of each enumerated path, proportional to its
/// policy probability under the current theta and normalized over the
/// enumerated subset. Gaps whose paths all have probability 0 are omitted
/// from this round.
inline void e_step(const Mdp& mdp, const Theta& theta, const Eigen::MatrixXd& z,
                   std::vector<GapPathSet>& sets) {
  for (GapPathSet& set : sets) {
    if (set.paths.empty()) {
      set.omitted = true;
      continue;
    }
    Eigen::VectorXd w(set.paths.size());
    for (std::size_t h = 0; h < set.paths.size(); ++h)
      w[h] = detail::path_prob(mdp, theta, z.col(set.group), set.paths[h]);
    const double total = w.sum();
    if (!(total > 0.0)) {
      set.omitted = true;
      continue;
    }
    set.omitted = false;
    set.weights = w / total;
  }
}

/// The E-step surrogate at fixed weights: observed-step terms plus
/// sum_gaps sum_h w_h ln P(gamma_h | theta). This is the M-step objective.
inline LogLik em_surrogate_loglik(const Dataset& dataset, const Mdp& mdp,
                                  const Theta& theta,
                                  const std::vector<GapPathSet>& sets) {
  LogLik total = connected_dataset_loglik(dataset, mdp, theta);
  if (!std::isfinite(total.value)) return total;

  const ForwardSolution sol = solve_forward(mdp, theta);
  std::vector<Eigen::MatrixXd> jac_by_group(mdp.n_groups());
  std::vector<bool> ready(mdp.n_groups(), false);
  for (const GapPathSet& set : sets) {
    if (set.omitted) continue;
    if (!ready[set.group]) {
      jac_by_group[set.group] = detail::group_jacobian(sol, set.group);
      ready[set.group] = true;
    }
    const auto z = sol.z.col(set.group);
    const auto& jac = jac_by_group[set.group];
    for (std::size_t h = 0; h < set.paths.size(); ++h) {
      const double w = set.weights[h];
      if (w == 0.0) continue;
      const std::vector<StateId>& path = set.paths[h];
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const detail::WalkTerm term =
            detail::walk_step(mdp, theta, z, jac, path[i], path[i + 1], true);
        if (!term.ok) {
          total.value = -std::numeric_limits<double>::infinity();
          total.notes.push_back("surrogate path step (" + std::to_string(path[i]) + "->" +
                                std::to_string(path[i + 1]) + ") has probability 0");
          return total;
        }
        total.value += w * std::log(term.prob);
        total.grad += (w / term.prob) * term.grad;
      }
    }
  }
  return total;
}

/// Marginal log-likelihood restricted to the enumerated path sets:
/// observed steps plus ln sum_h P(gamma_h|theta) per gap. EM ascends this
/// quantity; it is recorded per outer iteration.
inline double em_restricted_loglik(const Dataset& dataset, const Mdp& mdp,
                                   const Theta& theta,
                                   const std::vector<GapPathSet>& sets) {
  const LogLik base = connected_dataset_loglik(dataset, mdp, theta);
  if (!std::isfinite(base.value)) return base.value;
  const ForwardSolution sol = solve_forward(mdp, theta);
  double value = base.value;
  for (const GapPathSet& set : sets) {
    if (set.paths.empty()) continue;
    double total = 0.0;
    for (const auto& path : set.paths)
      total += detail::path_prob(mdp, theta, sol.z.col(set.group), path);
    if (total > 0.0) value += std::log(total);
  }
  return value;
}

/// M step: maximizes the surrogate at fixed weights with the shared
/// backtracking gradient-ascent optimizer.
inline OptimizeResult m_step(const Dataset& dataset, const Mdp& mdp,
                             const std::vector<GapPathSet>& sets, const Theta& theta0,
                             const OptimizeConfig& config) {
  const Objective objective = [&](const Theta& theta) -> ObjectiveValue {
    try {
      LogLik l = em_surrogate_loglik(dataset, mdp, theta, sets);
      return {l.value, std::move(l.grad)};
    } catch (const NumericalError&) {
      return {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
    }
  };
  return maximize(objective, theta0, config);
}

struct EmReport {
  Theta theta;
  int outer_iterations = 0;
  bool converged = false;
  long evals = 0;
  int omitted_gaps = 0;
  std::vector<double> restricted_loglik;  // one entry per outer iteration
  double final_surrogate = 0.0;
};

inline constexpr double kEmThetaTol = 1e-5;

/// EM alternation with breadth-first path enumeration of depth H.
/// Enumeration happens once; weights are refreshed every outer iteration.
/// Stops when ||theta^{t+1} - theta^t||_inf < 1e-5 or after `outer_iters`.
inline EmReport em_train(const Dataset& dataset, const Mdp& mdp, int depth,
                         const Theta& theta0, int outer_iters,
                         const OptimizeConfig& inner = {}) {
  if (outer_iters < 1) throw ValidationError("em_train needs outer_iters >= 1");
  EmReport report;
  report.theta = theta0;
  std::vector<GapPathSet> sets = enumerate_gap_paths(mdp, dataset, depth);

  for (int outer = 1; outer <= outer_iters; ++outer) {
    const ForwardSolution sol = solve_forward(mdp, report.theta);
    e_step(mdp, report.theta, sol.z, sets);
    report.omitted_gaps = 0;
    for (const GapPathSet& set : sets) report.omitted_gaps += set.omitted ? 1 : 0;
    report.restricted_loglik.push_back(em_restricted_loglik(dataset, mdp, report.theta, sets));

    const OptimizeResult m = m_step(dataset, mdp, sets, report.theta, inner);
    report.evals += m.evals;
    report.outer_iterations = outer;
    report.final_surrogate = m.value;
    const double move = (m.theta - report.theta).cwiseAbs().maxCoeff();
    report.theta = m.theta;
    if (move < kEmThetaTol) {
      report.converged = true;
      break;
    }
  }
  return report;
}

}  // namespace irlin
