#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "irlin/datagen.hpp"
#include "irlin/likelihood.hpp"
#include "irlin/missing.hpp"
#include "irlin/trainer.hpp"

namespace irlin {

/// One benchmark cell. Timing columns are measurements; everything else is
/// deterministic given the flags and seeds.
struct BenchRow {
  std::string method;
  int rows = 0;
  int cols = 0;
  double missing_prob = 0.0;
  int seed = 0;
  double eval_loglik = 0.0;
  double ll_eval_seconds = 0.0;
  double factorize_seconds = 0.0;
  long iterations = 0;
};

namespace detail {

template <typename Fn>
double median_seconds(Fn&& fn, int reps) {
  std::vector<double> times;
  times.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace detail

/// Full-data LL+gradient evaluation timing: direct sparse solve vs value
/// iteration at `vi_eps`, on the same dataset and theta.
inline std::vector<BenchRow> bench_solver_timing(const Mdp& mdp, const Dataset& dataset,
                                                 const Theta& theta, int grid_rows,
                                                 int grid_cols, int reps = 5,
                                                 double vi_eps = 1e-10) {
  std::vector<BenchRow> rows;

  BenchRow direct;
  direct.method = "direct";
  direct.rows = grid_rows;
  direct.cols = grid_cols;
  LogLik ll_direct;
  const double fact_before = solve_counters().factorize_seconds;
  long fact_count_before = solve_counters().factorizations;
  direct.ll_eval_seconds = detail::median_seconds(
      [&] { ll_direct = dataset_loglik(dataset, mdp, theta); }, reps);
  const long fact_runs = solve_counters().factorizations - fact_count_before;
  direct.factorize_seconds = fact_runs > 0 ? (solve_counters().factorize_seconds - fact_before) /
                                                 static_cast<double>(fact_runs)
                                           : 0.0;
  direct.eval_loglik = ll_direct.value;
  rows.push_back(direct);

  BenchRow vi;
  vi.method = "value_iteration";
  vi.rows = grid_rows;
  vi.cols = grid_cols;
  LogLik ll_vi;
  long vi_iters = 0;
  vi.ll_eval_seconds = detail::median_seconds(
      [&] {
        const ForwardSolution sol =
            solve_forward_vi(mdp, theta, vi_eps, 100 * mdp.n_states() + 100000, &vi_iters);
        ll_vi = accumulate_dataset_loglik(dataset, mdp, theta, sol);
      },
      reps);
  vi.eval_loglik = ll_vi.value;
  vi.iterations = vi_iters;
  rows.push_back(vi);
  return rows;
}

/// Composition log-likelihood evaluation timing at a fixed theta for one
/// masked dataset (the Fig-1b-style time-vs-missing-probability curve).
inline BenchRow bench_composition_eval(const Mdp& mdp, const Dataset& masked,
                                       const Theta& theta, int grid_rows, int grid_cols,
                                       double missing_prob, int seed, int reps = 5) {
  BenchRow row;
  row.method = "composition-eval";
  row.rows = grid_rows;
  row.cols = grid_cols;
  row.missing_prob = missing_prob;
  row.seed = seed;
  LogLik ll;
  row.ll_eval_seconds = detail::median_seconds(
      [&] { ll = incomplete_dataset_loglik(masked, mdp, theta); }, reps);
  row.eval_loglik = ll.value;
  return row;
}

/// Mask -> train -> evaluate on the no-missing dataset. One recovery cell.
inline BenchRow bench_recovery_cell(const Mdp& mdp, const Dataset& full_dataset,
                                    double missing_prob, int seed, TrainConfig config,
                                    int grid_rows, int grid_cols) {
  const Dataset masked =
      apply_missing(full_dataset, missing_prob, static_cast<std::uint64_t>(seed));
  config.seed = static_cast<std::uint64_t>(seed);
  const TrainReport report = train(masked, mdp, config);
  BenchRow row;
  row.method = to_string(config.mode);
  row.rows = grid_rows;
  row.cols = grid_cols;
  row.missing_prob = missing_prob;
  row.seed = seed;
  row.eval_loglik = evaluate(report.theta_hat, full_dataset, mdp);
  row.ll_eval_seconds = report.seconds_per_eval;
  row.factorize_seconds = report.seconds_factorize;
  row.iterations = report.iterations;
  return row;
}

/// Mean and 95% confidence interval per (method, missing probability),
/// t-interval with n-1 degrees of freedom over the seeds.
struct BenchAggregate {
  std::string method;
  double missing_prob = 0.0;
  int n = 0;
  double loglik_mean = 0.0;
  double loglik_ci_lo = 0.0;
  double loglik_ci_hi = 0.0;
  double ll_eval_seconds_mean = 0.0;
  double factorize_seconds_mean = 0.0;
  double iterations_mean = 0.0;
};

/// Two-sided 97.5% Student-t critical values; df > 30 falls back to normal.
inline double t_critical_975(int df) {
  static constexpr double table[] = {
      12.7062, 4.30265, 3.18245, 2.77645, 2.57058, 2.44691, 2.36462, 2.30600,
      2.26216, 2.22814, 2.20099, 2.17881, 2.16037, 2.14479, 2.13145, 2.11991,
      2.10982, 2.10092, 2.09302, 2.08596, 2.07961, 2.07387, 2.06866, 2.06390,
      2.05954, 2.05553, 2.05183, 2.04841, 2.04523, 2.04227};
  if (df < 1) throw ValidationError("t-interval needs at least 1 degree of freedom");
  if (df <= 30) return table[df - 1];
  return 1.95996;
}

inline std::vector<BenchAggregate> aggregate_bench_rows(const std::vector<BenchRow>& rows) {
  std::map<std::pair<std::string, double>, std::vector<const BenchRow*>> cells;
  for (const BenchRow& row : rows) cells[{row.method, row.missing_prob}].push_back(&row);
  std::vector<BenchAggregate> out;
  for (const auto& [key, members] : cells) {
    BenchAggregate agg;
    agg.method = key.first;
    agg.missing_prob = key.second;
    agg.n = static_cast<int>(members.size());
    double sum = 0.0, time_sum = 0.0, fact_sum = 0.0, iter_sum = 0.0;
    for (const BenchRow* row : members) {
      sum += row->eval_loglik;
      time_sum += row->ll_eval_seconds;
      fact_sum += row->factorize_seconds;
      iter_sum += static_cast<double>(row->iterations);
    }
    agg.loglik_mean = sum / agg.n;
    agg.ll_eval_seconds_mean = time_sum / agg.n;
    agg.factorize_seconds_mean = fact_sum / agg.n;
    agg.iterations_mean = iter_sum / agg.n;
    if (agg.n > 1) {
      double ss = 0.0;
      for (const BenchRow* row : members) {
        const double d = row->eval_loglik - agg.loglik_mean;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / (agg.n - 1));
      const double half = t_critical_975(agg.n - 1) * sd / std::sqrt(static_cast<double>(agg.n));
      agg.loglik_ci_lo = agg.loglik_mean - half;
      agg.loglik_ci_hi = agg.loglik_mean + half;
    } else {
      agg.loglik_ci_lo = agg.loglik_ci_hi = agg.loglik_mean;
    }
    out.push_back(std::move(agg));
  }
  return out;
}

}  // namespace irlin
