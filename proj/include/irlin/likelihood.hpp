#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "irlin/forward.hpp"
#include "irlin/mdp.hpp"
#include "irlin/trajectory.hpp"
#include "irlin/types.hpp"

namespace irlin {

inline constexpr double kUnderflowWarn = 1e-300;

/// Log-likelihood value with its gradient w.r.t. theta. Trajectories whose
/// likelihood is -inf (unreachable states or zero-probability gaps) are
/// excluded from both sums and reported through `excluded`/`notes`.
struct LogLik {
  double value = 0.0;
  Eigen::VectorXd grad;
  int excluded = 0;
  std::vector<std::string> notes;
};

/// P(a|s) = sum_{s'} p(s'|a,s) e^{r(s'|s,theta)} z_{s'} / z_s.
inline double action_prob(const Mdp& mdp, const Theta& theta, StateId s, ActionId a,
                          const Eigen::Ref<const Eigen::VectorXd>& z) {
  mdp.check_theta(theta);
  const auto& actions = mdp.actions(s);
  if (a < 0 || a >= static_cast<ActionId>(actions.size()))
    throw ValidationError("action " + std::to_string(a) + " unavailable at state " +
                          std::to_string(s));
  if (!(z[s] > 0.0))
    throw ValidationError("state " + std::to_string(s) +
                          " unreachable to destination (z <= 0)");
  const TransitionTable& table = mdp.transitions();
  double num = 0.0;
  for (const Successor& succ : actions[a].successors)
    num += succ.prob * std::exp(theta.dot(table.features(succ.pair_index))) * z[succ.state];
  return num / z[s];
}

/// dP(a|s)/dtheta, with J the |S| x T Jacobian block of this destination
/// group (column t = dz/dtheta_t). Quotient rule over the numerator of
/// P(a|s) and z_s.
inline Eigen::VectorXd action_prob_grad(const Mdp& mdp, const Theta& theta, StateId s,
                                        ActionId a,
                                        const Eigen::Ref<const Eigen::VectorXd>& z,
                                        const Eigen::Ref<const Eigen::MatrixXd>& jac) {
  mdp.check_theta(theta);
  const auto& actions = mdp.actions(s);
  if (a < 0 || a >= static_cast<ActionId>(actions.size()))
    throw ValidationError("action " + std::to_string(a) + " unavailable at state " +
                          std::to_string(s));
  if (!(z[s] > 0.0))
    throw ValidationError("state " + std::to_string(s) +
                          " unreachable to destination (z <= 0)");
  const TransitionTable& table = mdp.transitions();
  const int n_features = mdp.n_features();
  double num = 0.0;
  Eigen::VectorXd dnum = Eigen::VectorXd::Zero(n_features);
  for (const Successor& succ : actions[a].successors) {
    const auto f = table.features(succ.pair_index);
    const double w = succ.prob * std::exp(theta.dot(f));
    num += w * z[succ.state];
    dnum += w * (z[succ.state] * f + jac.row(succ.state).transpose());
  }
  return dnum / z[s] - (num / (z[s] * z[s])) * jac.row(s).transpose();
}

namespace detail {

struct StepTerms {
  bool finite = true;
  double value = 0.0;
  Eigen::VectorXd grad;
  std::string reason;
  bool underflow = false;
};

/// ln P(a_i|s_i) summed over observed steps, with the gradient
/// d ln P = dnum/num - J_s/z_s accumulated per step.
template <typename StepRange>
StepTerms accumulate_steps(const Mdp& mdp, const Theta& theta,
                           const Eigen::Ref<const Eigen::VectorXd>& z,
                           const Eigen::Ref<const Eigen::MatrixXd>& jac,
                           const StepRange& steps) {
  const TransitionTable& table = mdp.transitions();
  const int n_features = mdp.n_features();
  StepTerms out;
  out.grad = Eigen::VectorXd::Zero(n_features);
  for (const ObservedStep& step : steps) {
    if (!(z[step.state] > 0.0)) {
      out.finite = false;
      out.reason = "state " + std::to_string(step.state) + " has z <= 0";
      return out;
    }
    if (z[step.state] < kUnderflowWarn) out.underflow = true;
    double num = 0.0;
    Eigen::VectorXd dnum = Eigen::VectorXd::Zero(n_features);
    for (const Successor& succ : mdp.actions(step.state)[step.action].successors) {
      const auto f = table.features(succ.pair_index);
      const double w = succ.prob * std::exp(theta.dot(f));
      num += w * z[succ.state];
      dnum += w * (z[succ.state] * f + jac.row(succ.state).transpose());
    }
    if (!(num > 0.0)) {
      out.finite = false;
      out.reason = "action " + std::to_string(step.action) + " at state " +
                   std::to_string(step.state) + " has probability 0";
      return out;
    }
    out.value += std::log(num) - std::log(z[step.state]);
    out.grad += dnum / num - jac.row(step.state).transpose() / z[step.state];
  }
  return out;
}

/// Flattens the observed steps of a trajectory.
inline std::vector<ObservedStep> observed_steps(const Trajectory& traj) {
  std::vector<ObservedStep> steps;
  steps.reserve(traj.n_observed_steps());
  for (const Segment& seg : traj.segments)
    if (const auto* run = std::get_if<ObservedRun>(&seg))
      steps.insert(steps.end(), run->steps.begin(), run->steps.end());
  return steps;
}

/// Per-group Jacobian block: column t is dz/dtheta_t restricted to group g.
inline Eigen::MatrixXd group_jacobian(const ForwardSolution& sol, int g) {
  const int n = static_cast<int>(sol.z.rows());
  const int n_features = static_cast<int>(sol.jacobian.size());
  Eigen::MatrixXd jac(n, n_features);
  for (int t = 0; t < n_features; ++t) jac.col(t) = sol.jacobian[t].col(g);
  return jac;
}

}  // namespace detail

/// Log-likelihood (and gradient) of one fully observed trajectory given its
/// group's z column and Jacobian block. -inf trajectories come back with a
/// reason instead of throwing.
inline LogLik trajectory_loglik(const Mdp& mdp, const Theta& theta, const Trajectory& traj,
                                const Eigen::Ref<const Eigen::VectorXd>& z,
                                const Eigen::Ref<const Eigen::MatrixXd>& jac) {
  LogLik out;
  out.grad = Eigen::VectorXd::Zero(mdp.n_features());
  const auto steps = detail::observed_steps(traj);
  auto terms = detail::accumulate_steps(mdp, theta, z, jac, steps);
  if (!terms.finite) {
    out.value = -std::numeric_limits<double>::infinity();
    out.notes.push_back(terms.reason);
    return out;
  }
  if (terms.underflow) out.notes.push_back("z underflow below 1e-300 along trajectory");
  out.value = terms.value;
  out.grad = std::move(terms.grad);
  return out;
}

/// Sums trajectory log-likelihoods against a precomputed forward solution.
/// Shared by the direct and value-iteration evaluation routes.
inline LogLik accumulate_dataset_loglik(const Dataset& dataset, const Mdp& mdp,
                                        const Theta& theta, const ForwardSolution& sol) {
  LogLik total;
  total.grad = Eigen::VectorXd::Zero(mdp.n_features());
  if (dataset.empty()) return total;
  const std::vector<int> groups = group_trajectories(mdp, dataset);
  std::vector<Eigen::MatrixXd> jac_by_group(mdp.n_groups());
  std::vector<bool> jac_ready(mdp.n_groups(), false);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int g = groups[i];
    if (!jac_ready[g]) {
      jac_by_group[g] = detail::group_jacobian(sol, g);
      jac_ready[g] = true;
    }
    LogLik one = trajectory_loglik(mdp, theta, dataset[i], sol.z.col(g), jac_by_group[g]);
    if (!std::isfinite(one.value)) {
      ++total.excluded;
      for (const std::string& note : one.notes)
        total.notes.push_back("trajectory " + std::to_string(i) + ": " + note);
      continue;
    }
    total.value += one.value;
    total.grad += one.grad;
  }
  if (total.excluded == static_cast<int>(dataset.size())) {
    total.value = -std::numeric_limits<double>::infinity();
    total.notes.push_back("every trajectory was excluded");
  }
  return total;
}

/// Log-likelihood of a fully observed dataset: solves the T+1 composed
/// systems once (one factorization, one z batch, T Jacobian batches),
/// independent of the trajectory count, then accumulates.
inline LogLik dataset_loglik(const Dataset& dataset, const Mdp& mdp, const Theta& theta) {
  if (dataset.empty()) {
    LogLik empty;
    empty.grad = Eigen::VectorXd::Zero(mdp.n_features());
    return empty;
  }
  for (const Trajectory& traj : dataset)
    if (traj.has_gaps())
      throw ValidationError("dataset_loglik expects fully observed trajectories");
  return accumulate_dataset_loglik(dataset, mdp, theta, solve_forward(mdp, theta));
}

/// Policy transition matrix: row s holds P(next=s'|s) = sum_a p(s'|a,s) P(a|s).
/// Rows of absorbing states and of states with z <= 0 are empty. Verifies
/// that every populated row is normalized.
inline SparseRowMat policy_transition_matrix(const Mdp& mdp, const Theta& theta,
                                             const Eigen::Ref<const Eigen::VectorXd>& z) {
  mdp.check_theta(theta);
  const TransitionTable& table = mdp.transitions();
  const int n = mdp.n_states();
  std::vector<Eigen::Triplet<double>> triplets;
  for (StateId s = 0; s < n; ++s) {
    if (mdp.is_absorbing(s) || !(z[s] > 0.0)) continue;
    double row_sum = 0.0;
    std::map<StateId, double> row;
    for (const Action& action : mdp.actions(s)) {
      double num = 0.0;
      for (const Successor& succ : action.successors)
        num += succ.prob * std::exp(theta.dot(table.features(succ.pair_index))) * z[succ.state];
      const double pa = num / z[s];
      row_sum += pa;
      for (const Successor& succ : action.successors)
        row[succ.state] += succ.prob * pa;
    }
    if (std::abs(row_sum - 1.0) > 1e-9)
      throw ValidationError("action probabilities at state " + std::to_string(s) +
                            " sum to " + std::to_string(row_sum) +
                            "; z is inconsistent with theta");
    for (const auto& [to, p] : row) triplets.emplace_back(s, to, p);
  }
  SparseRowMat policy(n, n);
  policy.setFromTriplets(triplets.begin(), triplets.end());
  return policy;
}

/// d/dtheta_t of the policy transition matrix, same sparsity pattern.
inline std::vector<SparseRowMat> policy_transition_grad(
    const Mdp& mdp, const Theta& theta, const Eigen::Ref<const Eigen::VectorXd>& z,
    const Eigen::Ref<const Eigen::MatrixXd>& jac) {
  mdp.check_theta(theta);
  const int n = mdp.n_states();
  const int n_features = mdp.n_features();
  std::vector<std::vector<Eigen::Triplet<double>>> triplets(n_features);
  for (StateId s = 0; s < n; ++s) {
    if (mdp.is_absorbing(s) || !(z[s] > 0.0)) continue;
    std::map<StateId, Eigen::VectorXd> row;
    for (ActionId a = 0; a < static_cast<ActionId>(mdp.actions(s).size()); ++a) {
      const Eigen::VectorXd dpa = action_prob_grad(mdp, theta, s, a, z, jac);
      for (const Successor& succ : mdp.actions(s)[a].successors) {
        auto [it, inserted] =
            row.try_emplace(succ.state, Eigen::VectorXd::Zero(n_features));
        it->second += succ.prob * dpa;
      }
    }
    for (const auto& [to, grad] : row)
      for (int t = 0; t < n_features; ++t)
        if (grad[t] != 0.0) triplets[t].emplace_back(s, to, grad[t]);
  }
  std::vector<SparseRowMat> out;
  out.reserve(n_features);
  for (int t = 0; t < n_features; ++t) {
    SparseRowMat g(n, n);
    g.setFromTriplets(triplets[t].begin(), triplets[t].end());
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace irlin
