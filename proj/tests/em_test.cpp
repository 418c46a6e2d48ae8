#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "irlin/irlin.hpp"
#include "test_support.hpp"

using namespace irlin;
using testutil::make_chain3;
using testutil::make_diamond;

namespace {

Theta minus_one() {
  Theta t(1);
  t << -1.0;
  return t;
}

/// All u -> v support paths of a DAG by exhaustive DFS (enumeration oracle).
std::set<std::vector<StateId>> all_paths_dfs(const Mdp& mdp, StateId u, StateId v) {
  std::set<std::vector<StateId>> found;
  std::function<void(std::vector<StateId>&)> walk = [&](std::vector<StateId>& path) {
    const StateId at = path.back();
    if (at == v && path.size() > 1) {
      found.insert(path);
      return;  // acyclic: no path revisits v
    }
    const TransitionTable& table = mdp.transitions();
    for (std::int32_t k = table.row_ptr[at]; k < table.row_ptr[at + 1]; ++k) {
      path.push_back(table.col[k]);
      walk(path);
      path.pop_back();
    }
  };
  std::vector<StateId> path{u};
  walk(path);
  return found;
}

}  // namespace

TEST_CASE("bfs_paths enumerates bounded-depth connections") {
  SECTION("chain") {
    const auto paths = bfs_paths(make_chain3(), 0, 2, 2);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0] == std::vector<StateId>{0, 1, 2});
  }

  SECTION("diamond at exhaustive depth") {
    const auto paths = bfs_paths(make_diamond(), 0, 3, 2);
    REQUIRE(paths.size() == 2);
    // breadth-first order, ascending successor state within a level
    CHECK(paths[0] == std::vector<StateId>{0, 1, 3});
    CHECK(paths[1] == std::vector<StateId>{0, 2, 3});
  }

  SECTION("depth below the shortest connection finds nothing") {
    CHECK(bfs_paths(make_diamond(), 0, 3, 1).empty());
  }

  SECTION("revisits are allowed without marking") {
    MdpBuilder b(3, testutil::scalar_schema());
    b.add_action(0, {{1, 1.0}});
    b.set_features(0, 1, {1.0});
    b.add_action(1, {{0, 1.0}});
    b.set_features(1, 0, {1.0});
    b.add_action(1, {{2, 1.0}});
    b.set_features(1, 2, {1.0});
    b.add_group({2});
    const Mdp loop = b.build();
    const auto paths = bfs_paths(loop, 0, 2, 4);
    REQUIRE(paths.size() == 2);
    CHECK(paths[0] == std::vector<StateId>{0, 1, 2});
    CHECK(paths[1] == std::vector<StateId>{0, 1, 0, 1, 2});
  }

  SECTION("path cap raises a hard error") {
    const Mdp diamond = make_diamond();
    CHECK_THROWS_AS(bfs_paths(diamond, 0, 3, 2, 1), ValidationError);
  }

  SECTION("matches the DFS enumeration oracle at exhaustive depth") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 10; ++trial) {
      const auto inst = testutil::random_dag(rng);
      const int n = inst.mdp.n_states();
      const auto got = bfs_paths(inst.mdp, 0, n - 1, n);
      const auto want = all_paths_dfs(inst.mdp, 0, n - 1);
      CHECK(got.size() == want.size());
      CHECK(std::set<std::vector<StateId>>(got.begin(), got.end()) == want);
    }
  }
}

TEST_CASE("e_step weights paths by their policy probability") {
  SECTION("single path gets weight one") {
    const Mdp chain = make_chain3();
    const ForwardSolution sol = solve_forward(chain, minus_one());
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 2;
    traj.segments.push_back(Gap{0, 2});
    auto sets = enumerate_gap_paths(chain, {traj}, 3);
    e_step(chain, minus_one(), sol.z, sets);
    REQUIRE(sets.size() == 1);
    REQUIRE_FALSE(sets[0].omitted);
    CHECK(sets[0].weights[0] == Catch::Approx(1.0));
  }

  SECTION("symmetric diamond splits evenly") {
    const Mdp diamond = make_diamond();
    const ForwardSolution sol = solve_forward(diamond, minus_one());
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(Gap{0, 3});
    auto sets = enumerate_gap_paths(diamond, {traj}, 2);
    e_step(diamond, minus_one(), sol.z, sets);
    CHECK(sets[0].weights[0] == Catch::Approx(0.5));
    CHECK(sets[0].weights[1] == Catch::Approx(0.5));
  }

  SECTION("asymmetric diamond weights follow the normalized policy products") {
    const Mdp diamond = make_diamond(2.0);
    const ForwardSolution sol = solve_forward(diamond, minus_one());
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(Gap{0, 3});
    auto sets = enumerate_gap_paths(diamond, {traj}, 2);
    e_step(diamond, minus_one(), sol.z, sets);
    const double p_cheap = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(sets[0].weights[1] == Catch::Approx(p_cheap));        // 0.73106 via arm 2
    CHECK(sets[0].weights[0] == Catch::Approx(1.0 - p_cheap));  // 0.26894 via arm 1
  }

  SECTION("weights sum to one whenever paths exist") {
    std::mt19937_64 rng(103);
    for (int trial = 0; trial < 8; ++trial) {
      const auto inst = testutil::random_dag(rng);
      const ForwardSolution sol = solve_forward(inst.mdp, inst.theta);
      Trajectory traj;
      traj.origin = 0;
      traj.dest = inst.mdp.n_states() - 1;
      traj.segments.push_back(Gap{0, traj.dest});
      auto sets = enumerate_gap_paths(inst.mdp, {traj}, inst.mdp.n_states());
      e_step(inst.mdp, inst.theta, sol.z, sets);
      REQUIRE_FALSE(sets[0].omitted);
      CHECK(sets[0].weights.sum() == Catch::Approx(1.0).margin(1e-12));
      CHECK(sets[0].weights.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("em surrogate objective and gradient") {
  SECTION("no gaps: surrogate equals the full-data objective") {
    const Mdp diamond = make_diamond();
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(ObservedRun{{{0, 0}, {1, 0}}});
    const std::vector<GapPathSet> no_sets;
    const LogLik surrogate = em_surrogate_loglik({traj}, diamond, minus_one(), no_sets);
    const LogLik full = dataset_loglik({traj}, diamond, minus_one());
    CHECK(surrogate.value == Catch::Approx(full.value));
    CHECK(surrogate.grad[0] == Catch::Approx(full.grad[0]));
  }

  SECTION("weighted objective equals the hand-computed sum") {
    const Mdp diamond = make_diamond(2.0);
    const ForwardSolution sol = solve_forward(diamond, minus_one());
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(Gap{0, 3});
    auto sets = enumerate_gap_paths(diamond, {traj}, 2);
    e_step(diamond, minus_one(), sol.z, sets);
    const LogLik surrogate = em_surrogate_loglik({traj}, diamond, minus_one(), sets);
    // Direct summation: sum_h w_h * [ln P(first step of path h) + ln 1].
    const double p1 = action_prob(diamond, minus_one(), 0, 0, sol.z.col(0));
    const double p2 = action_prob(diamond, minus_one(), 0, 1, sol.z.col(0));
    const double want =
        sets[0].weights[0] * std::log(p1) + sets[0].weights[1] * std::log(p2);
    CHECK(surrogate.value == Catch::Approx(want).margin(1e-12));
  }

  SECTION("surrogate gradient matches finite differences at fixed weights") {
    std::mt19937_64 rng(107);
    for (int trial = 0; trial < 5; ++trial) {
      const auto inst = testutil::random_dag(rng);
      const Dataset full =
          sample_trajectories(inst.mdp, inst.theta, 5, {{0, inst.mdp.n_states() - 1}}, 3);
      const Dataset masked = apply_missing(full, 0.5, 13);
      auto sets = enumerate_gap_paths(inst.mdp, masked, inst.mdp.n_states());
      const ForwardSolution sol = solve_forward(inst.mdp, inst.theta);
      e_step(inst.mdp, inst.theta, sol.z, sets);
      const LogLik surrogate = em_surrogate_loglik(masked, inst.mdp, inst.theta, sets);
      const auto value_of = [&](const Theta& th) {
        return em_surrogate_loglik(masked, inst.mdp, th, sets).value;
      };
      const Eigen::VectorXd fd = testutil::fd_grad(value_of, inst.theta);
      CHECK(testutil::max_rel_err(surrogate.grad, fd) < 1e-6);
    }
  }
}

TEST_CASE("em_train") {
  OptimizeConfig inner;
  inner.grad_tol = 1e-8;
  inner.max_iters = 300;

  SECTION("no gaps converges straight to the full-data MLE") {
    const Mdp diamond = make_diamond(2.0);
    Dataset dataset;
    Trajectory via1;
    via1.origin = 0;
    via1.dest = 3;
    via1.segments.push_back(ObservedRun{{{0, 0}, {1, 0}}});
    Trajectory via2 = via1;
    via2.segments = {ObservedRun{{{0, 1}, {2, 0}}}};
    dataset.push_back(via1);
    dataset.push_back(via2);
    const EmReport em = em_train(dataset, diamond, 3, Theta::Zero(1), 10, inner);
    const OptimizeResult mle = maximize(
        [&](const Theta& th) -> ObjectiveValue {
          LogLik l = dataset_loglik(dataset, diamond, th);
          return {l.value, std::move(l.grad)};
        },
        Theta::Zero(1), inner);
    CHECK(em.converged);
    CHECK(em.outer_iterations <= 2);
    CHECK((em.theta - mle.theta).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("exhaustive enumeration agrees with composition training") {
    // Gap (0,1) on the asymmetric diamond plus a fully observed trajectory:
    // with every connecting path enumerated the EM fixed point and the
    // composition optimum maximize the same marginal likelihood.
    const Mdp diamond = make_diamond(2.0);
    Trajectory gapped;
    gapped.origin = 0;
    gapped.dest = 3;
    gapped.segments.push_back(Gap{0, 1});
    gapped.segments.push_back(ObservedRun{{{1, 0}}});
    Trajectory full;
    full.origin = 0;
    full.dest = 3;
    full.segments.push_back(ObservedRun{{{0, 1}, {2, 0}}});
    const Dataset dataset{gapped, full};

    const EmReport em = em_train(dataset, diamond, 1, Theta::Zero(1), 40, inner);
    const OptimizeResult comp = maximize(
        [&](const Theta& th) -> ObjectiveValue {
          try {
            LogLik l = incomplete_dataset_loglik(dataset, diamond, th);
            return {l.value, std::move(l.grad)};
          } catch (const NumericalError&) {
            return {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
          }
        },
        Theta::Zero(1), inner);
    const double ll_em = incomplete_dataset_loglik(dataset, diamond, em.theta).value;
    const double ll_comp = incomplete_dataset_loglik(dataset, diamond, comp.theta).value;
    CHECK(std::abs(ll_em - ll_comp) < 1e-3);
  }

  SECTION("depth below every connection degenerates to connected training") {
    const Mdp diamond = make_diamond(2.0);
    Trajectory full;
    full.origin = 0;
    full.dest = 3;
    full.segments.push_back(ObservedRun{{{0, 0}, {1, 0}}});
    Trajectory wide;  // gap 0 -> 3 needs two transitions; depth 1 finds none
    wide.origin = 0;
    wide.dest = 3;
    wide.segments.push_back(Gap{0, 3});
    const Dataset dataset2{wide, full};

    const EmReport em = em_train(dataset2, diamond, 1, Theta::Zero(1), 40, inner);
    CHECK(em.omitted_gaps == 1);
    const OptimizeResult connected = maximize(
        [&](const Theta& th) -> ObjectiveValue {
          LogLik l = connected_dataset_loglik(dataset2, diamond, th);
          return {l.value, std::move(l.grad)};
        },
        Theta::Zero(1), inner);
    CHECK((em.theta - connected.theta).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("restricted log-likelihood is non-decreasing across outer iterations") {
    std::mt19937_64 rng(109);
    for (int trial = 0; trial < 4; ++trial) {
      const auto inst = testutil::random_dag(rng, 8);
      const Dataset full =
          sample_trajectories(inst.mdp, inst.theta, 6, {{0, inst.mdp.n_states() - 1}}, 21);
      const Dataset masked = apply_missing(full, 0.6, 17);
      OptimizeConfig loose = inner;
      loose.max_iters = 60;
      const EmReport em =
          em_train(masked, inst.mdp, inst.mdp.n_states(), Theta::Zero(inst.mdp.n_features()),
                   8, loose);
      for (std::size_t i = 1; i < em.restricted_loglik.size(); ++i)
        CHECK(em.restricted_loglik[i] >= em.restricted_loglik[i - 1] - 1e-8);
    }
  }
}
