#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "irlin/forward.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/mdp.hpp"
#include "irlin/trajectory.hpp"

namespace irlin {

/// Deterministic RNG helpers on top of mt19937_64. Distributions are
/// hand-rolled so generated files do not depend on the standard library's
/// distribution implementations.
struct Rng {
  std::mt19937_64 engine;

  explicit Rng(std::uint64_t seed) : engine(seed) {}

  double uniform() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
      const std::uint64_t r = engine();
      if (r < limit) return r % n;
    }
  }

  int binomial(int trials, double p) {
    int hits = 0;
    for (int i = 0; i < trials; ++i) hits += bernoulli(p) ? 1 : 0;
    return hits;
  }
};

/// Grid road network: intersections on an n x m lattice, one state per
/// directed link. Turn indicators come from the lattice geometry; U-turn
/// links make the network cyclic, so condition (ii) governs invertibility.
struct GridNetwork {
  struct Link {
    int from_node;
    int to_node;
    double travel_time;  // minutes
  };

  int rows = 0;
  int cols = 0;
  std::vector<Link> links;  // state id = index

  int node(int r, int c) const { return r * cols + c; }
  int node_row(int n) const { return n / cols; }
  int node_col(int n) const { return n % cols; }
};

inline FeatureSchema grid_feature_schema() {
  return FeatureSchema{{{"left_turn", FeatureKind::Boolean},
                        {"u_turn", FeatureKind::Boolean},
                        {"incidence", FeatureKind::Boolean},
                        {"travel_time", FeatureKind::Real}}};
}

struct GeneratedGrid {
  GridNetwork grid;
  Mdp mdp;  // no destination groups yet; every link keeps its successors
};

/// Generates the n x m grid. Travel times are drawn uniformly in [10, 120]
/// seconds and stored in minutes so all four features share a common scale.
inline GeneratedGrid gen_grid(int rows, int cols, std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw ValidationError("grid needs rows >= 2 and cols >= 2");
  GridNetwork grid;
  grid.rows = rows;
  grid.cols = cols;

  // Directed links, two per lattice edge, enumerated row-major.
  std::vector<std::vector<int>> out_links(static_cast<std::size_t>(rows) * cols);
  const auto add_edge = [&](int a, int b) {
    grid.links.push_back({a, b, 0.0});
    out_links[a].push_back(static_cast<int>(grid.links.size()) - 1);
    grid.links.push_back({b, a, 0.0});
    out_links[b].push_back(static_cast<int>(grid.links.size()) - 1);
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) add_edge(grid.node(r, c), grid.node(r, c + 1));
      if (r + 1 < rows) add_edge(grid.node(r, c), grid.node(r + 1, c));
    }

  Rng rng(seed);
  for (auto& link : grid.links) link.travel_time = rng.uniform(10.0, 120.0) / 60.0;

  const auto direction = [&](const GridNetwork::Link& link) {
    return std::array<int, 2>{grid.node_row(link.to_node) - grid.node_row(link.from_node),
                              grid.node_col(link.to_node) - grid.node_col(link.from_node)};
  };

  MdpBuilder builder(static_cast<int>(grid.links.size()), grid_feature_schema());
  for (StateId s = 0; s < static_cast<StateId>(grid.links.size()); ++s) {
    const GridNetwork::Link& link = grid.links[s];
    const auto d1 = direction(link);
    std::vector<int> successors = out_links[link.to_node];
    std::sort(successors.begin(), successors.end());
    for (int next : successors) {
      const GridNetwork::Link& next_link = grid.links[next];
      const auto d2 = direction(next_link);
      const int cross = d1[0] * d2[1] - d1[1] * d2[0];
      const bool u_turn = next_link.to_node == link.from_node;
      const bool left = cross > 0;
      builder.add_action(s, {{static_cast<StateId>(next), 1.0}});
      builder.set_features(s, next,
                           {left ? 1.0 : 0.0, u_turn ? 1.0 : 0.0, 1.0,
                            next_link.travel_time});
    }
  }
  return {std::move(grid), builder.build()};
}

struct OdPair {
  StateId origin;
  StateId dest;
};

/// Draws `count` OD pairs with distinct destinations, origins reachable to
/// their destination under theta, and at least `min_node_dist` lattice steps
/// between the endpoints (relaxed when the grid cannot satisfy it).
inline std::vector<OdPair> sample_od_pairs(const GridNetwork& grid, const Mdp& base,
                                           const Theta& theta, int count,
                                           std::uint64_t seed, int min_node_dist = -1) {
  if (count < 1) throw ValidationError("need at least one OD pair");
  const int n = base.n_states();
  if (count > n / 4)
    throw ValidationError("too many OD pairs for this network size");
  Rng rng(seed);
  if (min_node_dist < 0) min_node_dist = (grid.rows + grid.cols) / 3;

  std::vector<StateId> dests;
  while (static_cast<int>(dests.size()) < count) {
    const StateId d = static_cast<StateId>(rng.below(n));
    if (std::find(dests.begin(), dests.end(), d) == dests.end()) dests.push_back(d);
  }
  std::vector<std::vector<StateId>> groups;
  std::vector<StateId> sorted_dests = dests;
  std::sort(sorted_dests.begin(), sorted_dests.end());
  for (StateId d : sorted_dests) groups.push_back({d});
  const Mdp routing = make_routing_mdp(base, groups);
  const ForwardSolution sol = solve_forward(routing, theta);

  const auto lattice_dist = [&](StateId a, StateId b) {
    const auto& la = grid.links[a];
    const auto& lb = grid.links[b];
    return std::abs(grid.node_row(la.to_node) - grid.node_row(lb.to_node)) +
           std::abs(grid.node_col(la.to_node) - grid.node_col(lb.to_node));
  };

  std::vector<OdPair> pairs;
  for (StateId d : dests) {
    const int g = routing.group_of(d);
    StateId origin = -1;
    for (int dist = min_node_dist; dist >= 0 && origin < 0; --dist) {
      for (int attempt = 0; attempt < 2000; ++attempt) {
        const StateId o = static_cast<StateId>(rng.below(n));
        if (routing.is_absorbing(o)) continue;
        if (lattice_dist(o, d) < dist) continue;
        if (!(sol.z(o, g) > 0.0)) continue;
        origin = o;
        break;
      }
    }
    if (origin < 0)
      throw ValidationError("could not find a reachable origin for destination " +
                            std::to_string(d));
    pairs.push_back({origin, d});
  }
  return pairs;
}

inline constexpr int kMaxResamples = 100;

/// Samples N trajectories by walking the local policy P(a|s; theta) from
/// each pair's origin until absorption, cycling through `od_pairs`. The MDP
/// must already carry the destination groups. Walks longer than 10|S| are
/// discarded and resampled.
inline Dataset sample_trajectories(const Mdp& mdp, const Theta& theta, int n_trajectories,
                                   const std::vector<OdPair>& od_pairs, std::uint64_t seed,
                                   bool skip_condition_check = false) {
  if (n_trajectories < 0) throw ValidationError("negative trajectory count");
  if (od_pairs.empty()) throw ValidationError("no OD pairs given");
  if (!skip_condition_check) {
    const ConditionII cond = check_condition_ii(mdp, theta);
    if (!cond.holds && !check_condition_i(mdp))
      throw ValidationError(
          "theta fails both invertibility conditions (tau=" + std::to_string(cond.tau) +
          "); make the rewards more negative or pass force");
  }
  for (const OdPair& od : od_pairs) {
    if (mdp.group_of(od.dest) < 0)
      throw ValidationError("destination " + std::to_string(od.dest) +
                            " has no destination group in the MDP");
    if (mdp.is_absorbing(od.origin))
      throw ValidationError("origin " + std::to_string(od.origin) + " is absorbing");
  }

  const ForwardSolution sol = solve_forward(mdp, theta);
  const TransitionTable& table = mdp.transitions();
  Rng rng(seed);
  const int max_steps = 10 * mdp.n_states();

  Dataset dataset;
  dataset.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    const OdPair od = od_pairs[static_cast<std::size_t>(i) % od_pairs.size()];
    const int g = mdp.group_of(od.dest);
    if (!(sol.z(od.origin, g) > 0.0))
      throw ValidationError("origin " + std::to_string(od.origin) +
                            " cannot reach destination " + std::to_string(od.dest));
    Trajectory traj;
    traj.origin = od.origin;
    traj.dest = od.dest;
    bool done = false;
    for (int attempt = 0; attempt < kMaxResamples && !done; ++attempt) {
      ObservedRun run;
      StateId s = od.origin;
      while (!mdp.is_absorbing(s) && static_cast<int>(run.steps.size()) < max_steps) {
        const auto& actions = mdp.actions(s);
        // Draw an action from P(.|s), then a successor from its kernel row.
        double mass = 0.0;
        std::vector<double> probs(actions.size());
        for (ActionId a = 0; a < static_cast<ActionId>(actions.size()); ++a) {
          double num = 0.0;
          for (const Successor& succ : actions[a].successors)
            num += succ.prob * std::exp(theta.dot(table.features(succ.pair_index))) *
                   sol.z(succ.state, g);
          probs[a] = num / sol.z(s, g);
          mass += probs[a];
        }
        double pick = rng.uniform() * mass;
        ActionId chosen = 0;
        for (ActionId a = 0; a < static_cast<ActionId>(actions.size()); ++a) {
          pick -= probs[a];
          if (pick <= 0.0) {
            chosen = a;
            break;
          }
          if (a + 1 == static_cast<ActionId>(actions.size())) chosen = a;
        }
        run.steps.push_back({s, chosen});
        const auto& succs = actions[chosen].successors;
        double pick2 = rng.uniform();
        StateId next = succs.back().state;
        for (const Successor& succ : succs) {
          pick2 -= succ.prob;
          if (pick2 <= 0.0) {
            next = succ.state;
            break;
          }
        }
        s = next;
      }
      if (mdp.is_absorbing(s)) {
        if (s != od.dest)
          throw ValidationError("walk from origin " + std::to_string(od.origin) +
                                " was absorbed at " + std::to_string(s) +
                                " instead of its destination " + std::to_string(od.dest));
        traj.segments = {run};
        done = true;
      }
    }
    if (!done)
      throw NumericalError("trajectory sampling hit the length cap " +
                           std::to_string(kMaxResamples) +
                           " times; theta* likely needs more negative rewards");
    dataset.push_back(std::move(traj));
  }
  return dataset;
}

/// Masks one consecutive interior window per trajectory. The window length
/// is Binomial(l-2, p) over the l-2 interior states; its position is uniform
/// over valid placements. Origin and destination are always retained.
inline Dataset apply_missing(const Dataset& dataset, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("missing probability must be in [0,1]");
  Rng rng(seed);
  Dataset out;
  out.reserve(dataset.size());
  for (const Trajectory& traj : dataset) {
    if (traj.has_gaps())
      throw ValidationError("apply_missing expects fully observed trajectories");
    const auto steps = detail::observed_steps(traj);
    const int l = static_cast<int>(steps.size()) + 1;  // states incl. destination
    const int interior = l - 2;
    if (interior < 1) {
      out.push_back(traj);
      continue;
    }
    const int len = rng.binomial(interior, p);
    if (len == 0) {
      out.push_back(traj);
      continue;
    }
    // States are x_0..x_{l-1}; remove x_start..x_{start+len-1}, interior only.
    const int start = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(l - 1 - len)));
    const auto state_at = [&](int idx) -> StateId {
      return idx < l - 1 ? steps[idx].state : traj.dest;
    };
    Trajectory masked;
    masked.origin = traj.origin;
    masked.dest = traj.dest;
    ObservedRun prefix;
    for (int idx = 0; idx + 1 < start; ++idx) prefix.steps.push_back(steps[idx]);
    if (!prefix.steps.empty()) masked.segments.push_back(prefix);
    masked.segments.push_back(Gap{state_at(start - 1), state_at(start + len)});
    ObservedRun suffix;
    for (int idx = start + len; idx < l - 1; ++idx) suffix.steps.push_back(steps[idx]);
    if (!suffix.steps.empty()) masked.segments.push_back(suffix);
    out.push_back(std::move(masked));
  }
  return out;
}

}  // namespace irlin
