#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "irlin/types.hpp"

namespace irlin {

enum class FeatureKind { Real, Boolean };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Real;
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  int size() const { return static_cast<int>(features.size()); }
};

/// One realizable outcome of an action: successor state, its probability,
/// and the index of the (s, s') pair in the transition table.
struct Successor {
  StateId state;
  double prob;
  std::int32_t pair_index = -1;
};

struct Action {
  std::vector<Successor> successors;
};

/// A set of zero-reward absorbing states shared by the trajectories assigned
/// to it. Singleton in the route-choice setting; kept as a set regardless.
struct DestinationGroup {
  std::vector<StateId> states;  // sorted

  bool contains(StateId s) const {
    return std::binary_search(states.begin(), states.end(), s);
  }
};

/// CSR view of the transition support: one entry per distinct (s, s') pair
/// with sum_a p(s'|a,s) and the dense feature vector f(s'|s). Feature values
/// default to 0 where unspecified.
struct TransitionTable {
  std::vector<std::int32_t> row_ptr;  // n_states + 1
  std::vector<StateId> col;
  std::vector<double> prob_sum;
  std::vector<double> feat;           // nnz * n_features, row-major per entry
  int n_features = 0;

  std::int32_t nnz() const { return static_cast<std::int32_t>(col.size()); }

  /// Index of pair (s, s2), or -1 if the transition is not in the support.
  std::int32_t find(StateId s, StateId s2) const {
    auto first = col.begin() + row_ptr[s];
    auto last = col.begin() + row_ptr[s + 1];
    auto it = std::lower_bound(first, last, s2);
    if (it == last || *it != s2) return -1;
    return static_cast<std::int32_t>(it - col.begin());
  }

  Eigen::Map<const Eigen::VectorXd> features(std::int32_t pair_index) const {
    return {feat.data() + static_cast<std::size_t>(pair_index) * n_features,
            n_features};
  }
};

class MdpBuilder;

/// Immutable MDP with a sparse kernel, per-pair features, linear reward
/// r(s'|s,theta) = theta . f(s'|s), discount fixed at 1, and the destination
/// groups whose states are absorbing (no outgoing kernel entries).
class Mdp {
 public:
  int n_states() const { return n_states_; }
  int n_features() const { return table_.n_features; }
  int n_groups() const { return static_cast<int>(groups_.size()); }

  const std::vector<Action>& actions(StateId s) const { return actions_[s]; }
  bool is_absorbing(StateId s) const { return actions_[s].empty(); }
  const TransitionTable& transitions() const { return table_; }
  const DestinationGroup& group(int n) const { return groups_[n]; }
  const std::vector<DestinationGroup>& groups() const { return groups_; }
  const FeatureSchema& schema() const { return schema_; }

  /// f(s2|s)_t; 0 when the pair is outside the stored support.
  double feature(StateId s, StateId s2, int t) const {
    const std::int32_t k = table_.find(s, s2);
    return k < 0 ? 0.0 : table_.feat[static_cast<std::size_t>(k) * n_features() + t];
  }

  /// r(s2|s,theta) = theta . f(s2|s). The transition must exist.
  double reward(StateId s, StateId s2, const Theta& theta) const {
    check_theta(theta);
    const std::int32_t k = table_.find(s, s2);
    if (k < 0) {
      std::ostringstream msg;
      msg << "reward: no transition from state " << s << " to state " << s2;
      throw ValidationError(msg.str());
    }
    return theta.dot(table_.features(k));
  }

  /// Group index owning destination state `dest`, or -1.
  int group_of(StateId dest) const {
    for (int g = 0; g < n_groups(); ++g)
      if (groups_[g].contains(dest)) return g;
    return -1;
  }

  void check_theta(const Theta& theta) const {
    if (theta.size() != n_features())
      throw ValidationError("theta has " + std::to_string(theta.size()) +
                            " entries, expected " + std::to_string(n_features()));
    if (!theta.allFinite()) throw ValidationError("theta has non-finite entries");
  }

 private:
  friend class MdpBuilder;
  Mdp() = default;

  int n_states_ = 0;
  std::vector<std::vector<Action>> actions_;
  TransitionTable table_;
  std::vector<DestinationGroup> groups_;
  FeatureSchema schema_;
};

class MdpBuilder {
 public:
  MdpBuilder(int n_states, FeatureSchema schema)
      : n_states_(n_states), schema_(std::move(schema)), actions_(n_states) {
    if (n_states < 0) throw ValidationError("negative state count");
  }

  /// Adds one action at `s` given its successor distribution. Duplicate
  /// successors are merged; the row must sum to 1.
  ActionId add_action(StateId s, std::vector<std::pair<StateId, double>> successors) {
    check_state(s);
    if (successors.empty())
      throw ValidationError("action at state " + std::to_string(s) +
                            " has no successors (unavailable actions are not stored)");
    std::sort(successors.begin(), successors.end());
    Action action;
    double total = 0.0;
    for (const auto& [to, p] : successors) {
      check_state(to);
      if (!(p >= 0.0 && p <= 1.0 + 1e-12))
        throw ValidationError("transition probability " + std::to_string(p) +
                              " out of [0,1] at state " + std::to_string(s));
      total += p;
      if (!action.successors.empty() && action.successors.back().state == to)
        action.successors.back().prob += p;
      else
        action.successors.push_back({to, p, -1});
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ValidationError("action " + std::to_string(actions_[s].size()) +
                            " at state " + std::to_string(s) +
                            ": successor probabilities sum to " + std::to_string(total));
    actions_[s].push_back(std::move(action));
    return static_cast<ActionId>(actions_[s].size() - 1);
  }

  /// Sets f(s2|s). The pair must be covered by some action's support.
  void set_features(StateId s, StateId s2, std::vector<double> values) {
    check_state(s);
    check_state(s2);
    if (static_cast<int>(values.size()) != schema_.size())
      throw ValidationError("feature vector for (" + std::to_string(s) + "," +
                            std::to_string(s2) + ") has " +
                            std::to_string(values.size()) + " entries, expected " +
                            std::to_string(schema_.size()));
    features_[{s, s2}] = std::move(values);
  }

  void add_group(std::vector<StateId> states) {
    if (states.empty()) throw ValidationError("empty destination group");
    std::sort(states.begin(), states.end());
    states.erase(std::unique(states.begin(), states.end()), states.end());
    for (StateId s : states) check_state(s);
    groups_.push_back(DestinationGroup{std::move(states)});
  }

  Mdp build() const {
    Mdp mdp;
    mdp.n_states_ = n_states_;
    mdp.schema_ = schema_;
    mdp.actions_ = actions_;
    mdp.groups_ = groups_;

    for (const auto& group : groups_)
      for (StateId s : group.states)
        if (!actions_[s].empty())
          throw ValidationError("destination state " + std::to_string(s) +
                                " has outgoing transitions; absorbing states must have none");

    // Assemble the (s, s') support table.
    TransitionTable& table = mdp.table_;
    table.n_features = schema_.size();
    table.row_ptr.assign(n_states_ + 1, 0);
    std::vector<std::vector<std::pair<StateId, double>>> rows(n_states_);
    for (StateId s = 0; s < n_states_; ++s) {
      std::map<StateId, double> merged;
      for (const Action& a : actions_[s])
        for (const Successor& succ : a.successors) merged[succ.state] += succ.prob;
      rows[s].assign(merged.begin(), merged.end());
      table.row_ptr[s + 1] = table.row_ptr[s] + static_cast<std::int32_t>(rows[s].size());
    }
    const std::int32_t nnz = table.row_ptr[n_states_];
    table.col.resize(nnz);
    table.prob_sum.resize(nnz);
    table.feat.assign(static_cast<std::size_t>(nnz) * schema_.size(), 0.0);
    for (StateId s = 0; s < n_states_; ++s) {
      std::int32_t k = table.row_ptr[s];
      for (const auto& [to, psum] : rows[s]) {
        table.col[k] = to;
        table.prob_sum[k] = psum;
        ++k;
      }
    }
    for (const auto& [pair, values] : features_) {
      const std::int32_t k = table.find(pair.first, pair.second);
      if (k < 0)
        throw ValidationError("features set for (" + std::to_string(pair.first) + "," +
                              std::to_string(pair.second) +
                              ") but no action reaches that pair");
      std::copy(values.begin(), values.end(),
                table.feat.begin() + static_cast<std::size_t>(k) * schema_.size());
    }

    // Back-fill pair indices on the stored successors.
    for (StateId s = 0; s < n_states_; ++s)
      for (Action& a : mdp.actions_[s])
        for (Successor& succ : a.successors) succ.pair_index = table.find(s, succ.state);

    return mdp;
  }

 private:
  void check_state(StateId s) const {
    if (s < 0 || s >= n_states_)
      throw ValidationError("state " + std::to_string(s) + " out of range [0," +
                            std::to_string(n_states_) + ")");
  }

  int n_states_;
  FeatureSchema schema_;
  std::vector<std::vector<Action>> actions_;
  std::map<std::pair<StateId, StateId>, std::vector<double>> features_;
  std::vector<DestinationGroup> groups_;
};

namespace detail {
inline constexpr double kExpOverflow = 700.0;  // exp(709.8) is the double limit
}

/// M_{s,s'} = sum_a p(s'|a,s) e^{r(s'|s,theta)}, compressed sparse row.
/// Rows of absorbing states are empty by construction.
inline SparseRowMat build_m(const Mdp& mdp, const Theta& theta) {
  mdp.check_theta(theta);
  const TransitionTable& table = mdp.transitions();
  const int n = mdp.n_states();
  SparseRowMat m(n, n);
  Eigen::VectorXi row_sizes(n);
  for (StateId s = 0; s < n; ++s)
    row_sizes[s] = table.row_ptr[s + 1] - table.row_ptr[s];
  m.reserve(row_sizes);
  for (StateId s = 0; s < n; ++s) {
    for (std::int32_t k = table.row_ptr[s]; k < table.row_ptr[s + 1]; ++k) {
      const double r = theta.dot(table.features(k));
      if (r > detail::kExpOverflow) {
        std::ostringstream msg;
        msg << "e^r overflows at transition (" << s << "," << table.col[k]
            << ") with r=" << r
            << "; rewards are expected to be non-positive (check the sign convention of theta)";
        throw NumericalError(msg.str());
      }
      m.insert(s, table.col[k]) = table.prob_sum[k] * std::exp(r);
    }
  }
  m.makeCompressed();
  return m;
}

/// True iff the transition support is acyclic (every cyclic state sequence
/// contains a zero-probability step). Independent of theta.
inline bool check_condition_i(const Mdp& mdp) {
  const TransitionTable& table = mdp.transitions();
  const int n = mdp.n_states();
  std::vector<int> in_degree(n, 0);
  for (std::int32_t k = 0; k < table.nnz(); ++k) ++in_degree[table.col[k]];
  std::queue<StateId> ready;
  for (StateId s = 0; s < n; ++s)
    if (in_degree[s] == 0) ready.push(s);
  int processed = 0;
  while (!ready.empty()) {
    const StateId s = ready.front();
    ready.pop();
    ++processed;
    for (std::int32_t k = table.row_ptr[s]; k < table.row_ptr[s + 1]; ++k)
      if (--in_degree[table.col[k]] == 0) ready.push(table.col[k]);
  }
  return processed == n;
}

struct ConditionII {
  bool holds = false;
  double tau = 0.0;  // max_s sum_{s'} M_{s,s'}
};

/// tau = max row sum of M; condition (ii) holds iff tau < 1. Never throws:
/// overflowing rewards surface as tau = inf.
inline ConditionII check_condition_ii(const Mdp& mdp, const Theta& theta) {
  mdp.check_theta(theta);
  const TransitionTable& table = mdp.transitions();
  double tau = 0.0;
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    double row = 0.0;
    for (std::int32_t k = table.row_ptr[s]; k < table.row_ptr[s + 1]; ++k)
      row += table.prob_sum[k] * std::exp(theta.dot(table.features(k)));
    tau = std::max(tau, row);
  }
  return {tau < 1.0 && std::isfinite(tau), tau};
}

/// Rebuilds `base` with every state of every group made absorbing (outgoing
/// kernel entries dropped) and the groups attached. The same network can be
/// reused with different destination sets.
inline Mdp make_routing_mdp(const Mdp& base,
                            const std::vector<std::vector<StateId>>& groups) {
  std::vector<bool> absorbing(base.n_states(), false);
  for (const auto& group : groups)
    for (StateId s : group) {
      if (s < 0 || s >= base.n_states())
        throw ValidationError("destination state " + std::to_string(s) + " out of range");
      absorbing[s] = true;
    }
  MdpBuilder builder(base.n_states(), base.schema());
  for (StateId s = 0; s < base.n_states(); ++s) {
    if (absorbing[s]) continue;
    for (const Action& a : base.actions(s)) {
      std::vector<std::pair<StateId, double>> succ;
      succ.reserve(a.successors.size());
      for (const Successor& t : a.successors) succ.emplace_back(t.state, t.prob);
      builder.add_action(s, std::move(succ));
    }
    const TransitionTable& table = base.transitions();
    for (std::int32_t k = table.row_ptr[s]; k < table.row_ptr[s + 1]; ++k) {
      auto f = table.features(k);
      builder.set_features(s, table.col[k],
                           std::vector<double>(f.data(), f.data() + f.size()));
    }
  }
  for (const auto& group : groups) builder.add_group(group);
  return builder.build();
}

}  // namespace irlin
