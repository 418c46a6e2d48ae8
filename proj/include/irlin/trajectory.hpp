#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "irlin/mdp.hpp"
#include "irlin/types.hpp"

namespace irlin {

/// One fully observed state-action pair.
struct ObservedStep {
  StateId state;
  ActionId action;
};

struct ObservedRun {
  std::vector<ObservedStep> steps;
};

/// A maximal run of unobserved state-action pairs. `from` is the last
/// observed state before the gap (its action is unobserved too), `to` the
/// first observed state after it.
struct Gap {
  StateId from;
  StateId to;
};

using Segment = std::variant<ObservedRun, Gap>;

/// Demonstrated trajectory: alternating observed runs and gaps. The origin
/// and the destination are always observed; the terminal (absorbing)
/// destination state carries no action and is stored only as `dest`.
struct Trajectory {
  StateId origin = 0;
  StateId dest = 0;
  std::vector<Segment> segments;

  bool has_gaps() const {
    for (const Segment& seg : segments)
      if (std::holds_alternative<Gap>(seg)) return true;
    return false;
  }

  std::size_t n_gaps() const {
    std::size_t n = 0;
    for (const Segment& seg : segments) n += std::holds_alternative<Gap>(seg) ? 1 : 0;
    return n;
  }

  std::size_t n_observed_steps() const {
    std::size_t n = 0;
    for (const Segment& seg : segments)
      if (const auto* run = std::get_if<ObservedRun>(&seg)) n += run->steps.size();
    return n;
  }
};

using Dataset = std::vector<Trajectory>;

inline bool has_gaps(const Dataset& dataset) {
  for (const Trajectory& traj : dataset)
    if (traj.has_gaps()) return true;
  return false;
}

namespace detail {

inline bool action_reaches(const Mdp& mdp, StateId s, ActionId a, StateId next) {
  for (const Successor& succ : mdp.actions(s)[a].successors)
    if (succ.state == next && succ.prob > 0.0) return true;
  return false;
}

}  // namespace detail

/// Structural validation against the kernel: runs follow the support,
/// gap endpoints line up with their neighbours, runs and gaps alternate,
/// and the trajectory ends at `dest`.
inline void validate_trajectory(const Mdp& mdp, const Trajectory& traj,
                                std::size_t index = 0) {
  const auto fail = [index](const std::string& what) {
    throw ValidationError("trajectory " + std::to_string(index) + ": " + what);
  };
  if (traj.origin < 0 || traj.origin >= mdp.n_states()) fail("origin out of range");
  if (traj.dest < 0 || traj.dest >= mdp.n_states()) fail("destination out of range");
  if (traj.segments.empty()) fail("no segments");

  StateId cursor = traj.origin;
  bool last_was_gap = false;
  for (std::size_t i = 0; i < traj.segments.size(); ++i) {
    if (const auto* run = std::get_if<ObservedRun>(&traj.segments[i])) {
      if (run->steps.empty()) fail("empty observed run");
      if (run->steps.front().state != cursor)
        fail("run starts at state " + std::to_string(run->steps.front().state) +
             ", expected " + std::to_string(cursor));
      for (std::size_t j = 0; j < run->steps.size(); ++j) {
        const ObservedStep& step = run->steps[j];
        if (step.state < 0 || step.state >= mdp.n_states()) fail("state out of range");
        const auto& actions = mdp.actions(step.state);
        if (step.action < 0 || step.action >= static_cast<ActionId>(actions.size()))
          fail("action " + std::to_string(step.action) + " unavailable at state " +
               std::to_string(step.state));
        if (j + 1 < run->steps.size()) {
          if (!detail::action_reaches(mdp, step.state, step.action, run->steps[j + 1].state))
            fail("observed step at state " + std::to_string(step.state) +
                 " cannot reach the next observed state");
          cursor = run->steps[j + 1].state;
        }
      }
      // The state after the run's last action is pinned by what follows
      // (the next gap's `from`, or the destination).
      const ObservedStep& last = run->steps.back();
      if (i + 1 < traj.segments.size()) {
        const auto* gap = std::get_if<Gap>(&traj.segments[i + 1]);
        if (gap == nullptr) fail("two adjacent observed runs");
        if (!detail::action_reaches(mdp, last.state, last.action, gap->from))
          fail("gap start " + std::to_string(gap->from) +
               " is not a successor of the last observed step");
        cursor = gap->from;
      } else {
        if (!detail::action_reaches(mdp, last.state, last.action, traj.dest))
          fail("destination " + std::to_string(traj.dest) +
               " is not a successor of the last observed step");
        cursor = traj.dest;
      }
      last_was_gap = false;
    } else {
      const Gap& gap = std::get<Gap>(traj.segments[i]);
      if (last_was_gap) fail("two adjacent gaps");
      if (i == 0 && gap.from != traj.origin) fail("leading gap must start at the origin");
      if (gap.from != cursor)
        fail("gap starts at state " + std::to_string(gap.from) + ", expected " +
             std::to_string(cursor));
      if (gap.to < 0 || gap.to >= mdp.n_states()) fail("gap endpoint out of range");
      cursor = gap.to;
      if (i + 1 == traj.segments.size() && gap.to != traj.dest)
        fail("trailing gap must end at the destination");
      last_was_gap = true;
    }
  }
  if (cursor != traj.dest) fail("trajectory does not end at its destination");
  if (!mdp.is_absorbing(traj.dest))
    fail("destination state " + std::to_string(traj.dest) + " is not absorbing");
}

/// Distinct terminal states of a dataset as singleton destination groups,
/// sorted by state id (deterministic grouping key).
inline std::vector<std::vector<StateId>> derive_destination_groups(const Dataset& dataset) {
  std::vector<StateId> dests;
  for (const Trajectory& traj : dataset) dests.push_back(traj.dest);
  std::sort(dests.begin(), dests.end());
  dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
  std::vector<std::vector<StateId>> groups;
  groups.reserve(dests.size());
  for (StateId d : dests) groups.push_back({d});
  return groups;
}

/// Group index per trajectory; every terminal state must belong to a group.
inline std::vector<int> group_trajectories(const Mdp& mdp, const Dataset& dataset) {
  std::vector<int> assignment;
  assignment.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int g = mdp.group_of(dataset[i].dest);
    if (g < 0)
      throw ValidationError("trajectory " + std::to_string(i) + ": destination " +
                            std::to_string(dataset[i].dest) +
                            " is not in any destination group");
    assignment.push_back(g);
  }
  return assignment;
}

}  // namespace irlin
