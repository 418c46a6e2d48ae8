#include <catch2/catch_amalgamated.hpp>

#include "irlin/irlin.hpp"
#include "test_support.hpp"

using namespace irlin;
using testutil::make_chain3;
using testutil::make_diamond;

namespace {

/// Diamond with a single arm-indicator feature: f = 1 on edge (0,1) only.
Mdp make_turn_diamond() {
  irlin::FeatureSchema schema{{{"arm1", FeatureKind::Boolean}}};
  MdpBuilder b(4, schema);
  b.add_action(0, {{1, 1.0}});
  b.set_features(0, 1, {1.0});
  b.add_action(0, {{2, 1.0}});
  b.set_features(0, 2, {0.0});
  b.add_action(1, {{3, 1.0}});
  b.set_features(1, 3, {0.0});
  b.add_action(2, {{3, 1.0}});
  b.set_features(2, 3, {0.0});
  b.add_group({3});
  return b.build();
}

Trajectory diamond_via(StateId mid) {
  Trajectory traj;
  traj.origin = 0;
  traj.dest = 3;
  traj.segments.push_back(ObservedRun{{{0, mid == 1 ? 0 : 1}, {mid, 0}}});
  return traj;
}

}  // namespace

TEST_CASE("train in full mode") {
  SECTION("in-sample likelihood dominates the generating parameters") {
    std::mt19937_64 rng(113);
    const auto inst = testutil::random_dag(rng);
    const Dataset dataset =
        sample_trajectories(inst.mdp, inst.theta, 40, {{0, inst.mdp.n_states() - 1}}, 19);
    TrainConfig config;
    config.mode = TrainMode::Full;
    config.theta0 = Theta::Zero(inst.mdp.n_features());
    config.grad_tol = 1e-4;
    const TrainReport report = train(dataset, inst.mdp, config);
    const double at_truth = dataset_loglik(dataset, inst.mdp, inst.theta).value;
    CHECK(report.final_loglik >= at_truth - 1e-6);
    CHECK(report.converged);
  }

  SECTION("single-path dataset stops immediately with zero gradient") {
    const Mdp chain = make_chain3();
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 2;
    traj.segments.push_back(ObservedRun{{{0, 0}, {1, 0}}});
    TrainConfig config;
    config.mode = TrainMode::Full;
    config.theta0 = Theta::Constant(1, -0.7);
    const TrainReport report = train({traj}, chain, config);
    CHECK(report.iterations == 0);
    CHECK(report.converged);
    CHECK(report.theta_hat[0] == -0.7);
    CHECK(report.final_loglik == Catch::Approx(0.0).margin(1e-14));
  }

  SECTION("balanced split estimates a zero arm preference") {
    const Mdp diamond = make_turn_diamond();
    const Dataset dataset{diamond_via(1), diamond_via(2)};
    TrainConfig config;
    config.mode = TrainMode::Full;
    config.theta0 = Theta::Constant(1, 0.7);
    const TrainReport report = train(dataset, diamond, config);
    CHECK(std::abs(report.theta_hat[0]) < 1e-3);
  }

  SECTION("gapped data is rejected") {
    const Mdp diamond = make_diamond();
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(Gap{0, 3});
    TrainConfig config;
    config.mode = TrainMode::Full;
    CHECK_THROWS_AS(train({traj}, diamond, config), ValidationError);
  }

  SECTION("non-finite objective at theta0 raises with diagnostics") {
    const auto generated = gen_grid(3, 3, 5);
    const Mdp routing = make_routing_mdp(generated.mdp, {{0}});
    const Theta theta_star = (Theta(4) << -1.0, -2.0, -1.2, -0.6).finished();
    const Dataset dataset = sample_trajectories(routing, theta_star, 3, {{2, 0}}, 23);
    TrainConfig config;
    config.mode = TrainMode::Full;
    config.theta0 = Theta::Zero(4);  // row sums ~3 at zero: z is unusable
    CHECK_THROWS_WITH(train(dataset, routing, config),
                      Catch::Matchers::ContainsSubstring("initial parameters"));
  }
}

TEST_CASE("mode consistency at zero missing probability") {
  std::mt19937_64 rng(127);
  const auto inst = testutil::random_dag(rng);
  const Dataset dataset =
      sample_trajectories(inst.mdp, inst.theta, 10, {{0, inst.mdp.n_states() - 1}}, 29);
  for (int probe = 0; probe < 4; ++probe) {
    Theta theta = inst.theta + Theta::Constant(inst.mdp.n_features(), -0.1 * probe);
    const LogLik full = dataset_loglik(dataset, inst.mdp, theta);
    const LogLik comp = incomplete_dataset_loglik(dataset, inst.mdp, theta);
    const LogLik conn = connected_dataset_loglik(dataset, inst.mdp, theta);
    CHECK(full.value == Catch::Approx(comp.value).margin(1e-12));
    CHECK((full.grad - comp.grad).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(full.value == Catch::Approx(conn.value).margin(1e-12));
    CHECK((full.grad - conn.grad).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("training trace ascends and composition handles gaps") {
  std::mt19937_64 rng(131);
  const auto inst = testutil::random_dag(rng);
  const Dataset full =
      sample_trajectories(inst.mdp, inst.theta, 25, {{0, inst.mdp.n_states() - 1}}, 31);
  const Dataset masked = apply_missing(full, 0.6, 37);

  TrainConfig config;
  config.mode = TrainMode::Composition;
  config.theta0 = Theta::Zero(inst.mdp.n_features());
  config.grad_tol = 1e-6;
  const TrainReport report = train(masked, inst.mdp, config);
  for (std::size_t i = 1; i < report.trace.size(); ++i)
    CHECK(report.trace[i].loglik >= report.trace[i - 1].loglik - 1e-12);
  CHECK(report.seconds_total >= 0.0);
  CHECK(report.seconds_per_eval >= 0.0);
  CHECK(report.evals >= report.iterations);

  SECTION("connected mode trains on the same data") {
    TrainConfig conn = config;
    conn.mode = TrainMode::Connected;
    const TrainReport connected = train(masked, inst.mdp, conn);
    CHECK(std::isfinite(connected.final_loglik));
  }

  SECTION("em-bfs mode trains on the same data") {
    TrainConfig em = config;
    em.mode = TrainMode::EmBfs;
    em.bfs_depth = inst.mdp.n_states();
    em.em_outer_iters = 6;
    em.grad_tol = 1e-5;
    const TrainReport em_report = train(masked, inst.mdp, em);
    CHECK(std::isfinite(em_report.final_loglik));
    CHECK(em_report.em_outer_iterations >= 1);
  }
}

TEST_CASE("evaluate") {
  const Mdp diamond = make_turn_diamond();
  const Dataset dataset{diamond_via(1), diamond_via(2)};

  SECTION("ascent property on the training set") {
    TrainConfig config;
    config.mode = TrainMode::Full;
    config.theta0 = Theta::Constant(1, 1.5);
    const TrainReport report = train(dataset, diamond, config);
    CHECK(evaluate(report.theta_hat, dataset, diamond) >=
          evaluate(config.theta0, dataset, diamond));
  }

  SECTION("held-out data evaluates finitely") {
    const Dataset held_out{diamond_via(2)};
    CHECK(std::isfinite(evaluate(Theta::Constant(1, -0.3), held_out, diamond)));
  }

  SECTION("gapped data is rejected") {
    Trajectory traj;
    traj.origin = 0;
    traj.dest = 3;
    traj.segments.push_back(Gap{0, 3});
    CHECK_THROWS_AS(evaluate(Theta::Zero(1), {traj}, diamond), ValidationError);
  }
}

TEST_CASE("gradient ascent optimizer behaviour") {
  SECTION("quadratic bowl converges") {
    const Objective objective = [](const Theta& th) -> ObjectiveValue {
      return {-th.squaredNorm(), -2.0 * th};
    };
    OptimizeConfig config;
    config.grad_tol = 1e-9;
    const OptimizeResult result = maximize(objective, Theta::Constant(3, 2.0), config);
    CHECK(result.converged);
    CHECK(result.theta.cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("non-finite start raises") {
    const Objective objective = [](const Theta&) -> ObjectiveValue {
      return {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
    };
    CHECK_THROWS_AS(maximize(objective, Theta::Zero(2), {}), ValidationError);
  }

  SECTION("line search failure returns the best iterate with the flag set") {
    // Gradient always claims ascent along +1 but the function only descends.
    const Objective objective = [](const Theta& th) -> ObjectiveValue {
      return {-std::abs(th[0]), Eigen::VectorXd::Constant(1, th[0] >= 0 ? 1.0 : -1.0)};
    };
    OptimizeConfig config;
    config.max_backtracks = 8;
    const OptimizeResult result = maximize(objective, Theta::Zero(1), config);
    CHECK(result.line_search_failed);
    CHECK(result.theta[0] == 0.0);
  }
}

TEST_CASE("validation of trajectories against the kernel") {
  const Mdp diamond = make_diamond();

  SECTION("well-formed trajectories pass") {
    CHECK_NOTHROW(validate_trajectory(diamond, diamond_via(1)));
    Trajectory gapped;
    gapped.origin = 0;
    gapped.dest = 3;
    gapped.segments.push_back(ObservedRun{{{0, 0}}});
    gapped.segments.push_back(Gap{1, 3});
    CHECK_NOTHROW(validate_trajectory(diamond, gapped));
  }

  SECTION("wrong action, wrong linkage, wrong destination all fail") {
    Trajectory bad_action;
    bad_action.origin = 0;
    bad_action.dest = 3;
    bad_action.segments.push_back(ObservedRun{{{0, 5}, {1, 0}}});
    CHECK_THROWS_AS(validate_trajectory(diamond, bad_action), ValidationError);

    Trajectory bad_link;
    bad_link.origin = 0;
    bad_link.dest = 3;
    bad_link.segments.push_back(ObservedRun{{{0, 0}, {2, 0}}});  // action 0 goes to 1
    CHECK_THROWS_AS(validate_trajectory(diamond, bad_link), ValidationError);

    Trajectory bad_dest;
    bad_dest.origin = 0;
    bad_dest.dest = 1;  // not absorbing
    bad_dest.segments.push_back(ObservedRun{{{0, 0}}});
    CHECK_THROWS_AS(validate_trajectory(diamond, bad_dest), ValidationError);

    Trajectory double_gap;
    double_gap.origin = 0;
    double_gap.dest = 3;
    double_gap.segments.push_back(Gap{0, 1});
    double_gap.segments.push_back(Gap{1, 3});
    CHECK_THROWS_AS(validate_trajectory(diamond, double_gap), ValidationError);
  }
}
