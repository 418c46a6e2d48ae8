#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "irlin/forward.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/mdp.hpp"
#include "irlin/trajectory.hpp"
#include "irlin/types.hpp"

namespace irlin {

/// One missing segment: u is the last observed state before the gap, v the
/// first observed state after it, both within one destination group.
struct MissingPair {
  StateId u;
  StateId v;
  int group;
};

/// Round-off slack for reach values read off Pi. Values within this margin
/// of [0,1] are clamped; larger excursions above 1 are legitimate on cyclic
/// networks (the reach system sums over completions of every length).
inline constexpr double kReachClampTol = 1e-9;

/// Q0 of the composed reach system: (|S|+1) x (|S|+1), with
/// Q0_{s,s'} = sum_a p(s|a,s') P(a|s') for s,s' in S and an all-zero
/// artificial last row and column. Column-major, ready for factorization.
inline SparseColMat build_q0(const Mdp& mdp, const Theta& theta,
                             const Eigen::Ref<const Eigen::VectorXd>& z) {
  const SparseRowMat policy = policy_transition_matrix(mdp, theta, z);
  const int n = mdp.n_states();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(policy.nonZeros());
  for (int s = 0; s < n; ++s)
    for (SparseRowMat::InnerIterator it(policy, s); it; ++it)
      triplets.emplace_back(static_cast<int>(it.col()), s, it.value());
  SparseColMat q0(n + 1, n + 1);
  q0.setFromTriplets(triplets.begin(), triplets.end());
  return q0;
}

/// dQ0/dtheta_t for each t, same pattern as Q0.
inline std::vector<SparseColMat> q0_grad(const Mdp& mdp, const Theta& theta,
                                         const Eigen::Ref<const Eigen::VectorXd>& z,
                                         const Eigen::Ref<const Eigen::MatrixXd>& jac) {
  const std::vector<SparseRowMat> dpolicy = policy_transition_grad(mdp, theta, z, jac);
  const int n = mdp.n_states();
  std::vector<SparseColMat> out;
  out.reserve(dpolicy.size());
  for (const SparseRowMat& dp : dpolicy) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(dp.nonZeros());
    for (int s = 0; s < n; ++s)
      for (SparseRowMat::InnerIterator it(dp, s); it; ++it)
        triplets.emplace_back(static_cast<int>(it.col()), s, it.value());
    SparseColMat dq(n + 1, n + 1);
    dq.setFromTriplets(triplets.begin(), triplets.end());
    out.push_back(std::move(dq));
  }
  return out;
}

/// D_{s,k} = 1 if s = |S|+1 (artificial row) or s = u_k; one column per pair.
inline Eigen::MatrixXd build_d(const std::vector<MissingPair>& pairs, int n_states) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_states + 1, static_cast<int>(pairs.size()));
  for (int k = 0; k < static_cast<int>(pairs.size()); ++k) {
    d(pairs[k].u, k) = 1.0;
    d(n_states, k) = 1.0;
  }
  return d;
}

/// Solves (I - Q0) Pi = D on an existing factorization; P(v_k|u_k) is read
/// off as Pi(v_k, k). One batch regardless of the number of pairs.
inline Eigen::MatrixXd solve_reach(const LuFactors& q0_factors, const Eigen::MatrixXd& d) {
  return q0_factors.solve(d);
}

/// Per-source reach system: zeroes row u of Q^{u} and solves
/// (I - Q^{u}) pi = e_u. Serves as the independent check of the composed
/// system (they must agree at every state).
inline Eigen::VectorXd solve_reach_single(const Mdp& mdp, const Theta& theta,
                                          const Eigen::Ref<const Eigen::VectorXd>& z,
                                          StateId u) {
  if (u < 0 || u >= mdp.n_states())
    throw ValidationError("reach source state " + std::to_string(u) + " out of range");
  const SparseRowMat policy = policy_transition_matrix(mdp, theta, z);
  const int n = mdp.n_states();
  std::vector<Eigen::Triplet<double>> triplets;
  for (int s = 0; s < n; ++s)
    for (SparseRowMat::InnerIterator it(policy, s); it; ++it)
      if (it.col() != u) triplets.emplace_back(static_cast<int>(it.col()), s, it.value());
  SparseColMat q(n, n);
  q.setFromTriplets(triplets.begin(), triplets.end());
  const LuFactors factors = factorize(q);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, 1);
  d(u, 0) = 1.0;
  return factors.solve(d).col(0);
}

/// dPi/dtheta_t = (I - Q0)^{-1} (dQ0/dtheta_t) Pi on the same factorization.
inline std::vector<Eigen::MatrixXd> reach_grad(const LuFactors& q0_factors,
                                               const std::vector<SparseColMat>& dq0,
                                               const Eigen::MatrixXd& pi) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(dq0.size());
  for (const SparseColMat& dq : dq0) out.push_back(q0_factors.solve(dq * pi));
  return out;
}

namespace detail {

struct GapRef {
  std::size_t traj;
  int group;
  int column;  // column in the group's D / Pi
  MissingPair pair;
};

struct GroupReach {
  std::vector<MissingPair> pairs;
  Eigen::MatrixXd pi;
  std::vector<Eigen::MatrixXd> dpi;
};

}  // namespace detail

/// Log-likelihood of trajectories with missing segments (and its gradient):
/// observed steps contribute ln P(a_i|s_i); each gap contributes
/// ln P(v_k|u_k) from the composed reach system of its destination group.
/// The linear-system count is (T+1)(1 + #groups-with-gaps), independent of
/// the number of gaps. With `include_gap_terms = false` the gap terms are
/// dropped, which is exactly the connected-segments objective.
inline LogLik incomplete_dataset_loglik(const Dataset& dataset, const Mdp& mdp,
                                        const Theta& theta, bool include_gap_terms = true) {
  LogLik total;
  total.grad = Eigen::VectorXd::Zero(mdp.n_features());
  if (dataset.empty()) return total;

  const std::vector<int> groups = group_trajectories(mdp, dataset);
  const ForwardSolution sol = solve_forward(mdp, theta);

  std::vector<Eigen::MatrixXd> jac_by_group(mdp.n_groups());
  std::vector<bool> jac_ready(mdp.n_groups(), false);
  const auto group_jac = [&](int g) -> const Eigen::MatrixXd& {
    if (!jac_ready[g]) {
      jac_by_group[g] = detail::group_jacobian(sol, g);
      jac_ready[g] = true;
    }
    return jac_by_group[g];
  };

  // Collect gaps per destination group, keeping (trajectory, column) refs.
  std::vector<detail::GroupReach> reach(mdp.n_groups());
  std::vector<std::vector<detail::GapRef>> gap_refs(dataset.size());
  if (include_gap_terms) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const int g = groups[i];
      for (const Segment& seg : dataset[i].segments) {
        if (const auto* gap = std::get_if<Gap>(&seg)) {
          detail::GapRef ref;
          ref.traj = i;
          ref.group = g;
          ref.column = static_cast<int>(reach[g].pairs.size());
          ref.pair = {gap->from, gap->to, g};
          reach[g].pairs.push_back(ref.pair);
          gap_refs[i].push_back(ref);
        }
      }
    }
    for (int g = 0; g < mdp.n_groups(); ++g) {
      if (reach[g].pairs.empty()) continue;
      const SparseColMat q0 = build_q0(mdp, theta, sol.z.col(g));
      const LuFactors factors = factorize(q0);
      const Eigen::MatrixXd d = build_d(reach[g].pairs, mdp.n_states());
      reach[g].pi = solve_reach(factors, d);
      const std::vector<SparseColMat> dq0 = q0_grad(mdp, theta, sol.z.col(g), group_jac(g));
      reach[g].dpi = reach_grad(factors, dq0, reach[g].pi);
    }
  }

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int g = groups[i];
    double value = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(mdp.n_features());
    bool finite = true;
    std::string reason;

    auto step_terms = detail::accumulate_steps(mdp, theta, sol.z.col(g), group_jac(g),
                                               detail::observed_steps(dataset[i]));
    if (!step_terms.finite) {
      finite = false;
      reason = step_terms.reason;
    } else {
      value = step_terms.value;
      grad = std::move(step_terms.grad);
      if (step_terms.underflow)
        total.notes.push_back("trajectory " + std::to_string(i) +
                              ": z underflow below 1e-300");
    }

    if (finite && include_gap_terms) {
      for (const detail::GapRef& ref : gap_refs[i]) {
        double p = reach[g].pi(ref.pair.v, ref.column);
        // A gap with u == v marginalizes a nonempty hidden loop; drop the
        // empty walk the system counts at the source row.
        if (ref.pair.u == ref.pair.v) p -= 1.0;
        if (p > 1.0 && p <= 1.0 + kReachClampTol) {
          total.notes.push_back("trajectory " + std::to_string(i) +
                                ": reach value clamped to 1 (excess " +
                                std::to_string(p - 1.0) + ")");
          p = 1.0;
        } else if (p < 0.0 && p >= -kReachClampTol) {
          p = 0.0;
        }
        if (!(p > 0.0)) {
          finite = false;
          reason = "gap (" + std::to_string(ref.pair.u) + " -> " +
                   std::to_string(ref.pair.v) + ") has reach probability 0";
          break;
        }
        value += std::log(p);
        for (int t = 0; t < mdp.n_features(); ++t)
          grad[t] += reach[g].dpi[t](ref.pair.v, ref.column) / p;
      }
    }

    if (!finite) {
      ++total.excluded;
      total.notes.push_back("trajectory " + std::to_string(i) + ": " + reason);
      continue;
    }
    total.value += value;
    total.grad += grad;
  }
  if (total.excluded == static_cast<int>(dataset.size())) {
    total.value = -std::numeric_limits<double>::infinity();
    total.notes.push_back("every trajectory was excluded");
  }
  return total;
}

/// Connected-segments objective: observed-step terms only, gaps ignored.
inline LogLik connected_dataset_loglik(const Dataset& dataset, const Mdp& mdp,
                                       const Theta& theta) {
  return incomplete_dataset_loglik(dataset, mdp, theta, /*include_gap_terms=*/false);
}

}  // namespace irlin
