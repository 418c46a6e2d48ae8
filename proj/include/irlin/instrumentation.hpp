#pragma once

namespace irlin {

/// Global solver instrumentation. A "solve batch" is one triangular solve
/// against an existing factorization, regardless of how many right-hand-side
/// columns it carries; factorizations are counted separately. The counters
/// exist so tests can assert the advertised system counts (T+1 for the
/// full-data likelihood, (T+1)(1+N_dest) with missing data).
///
/// Not synchronized: reset/read between runs from a single thread.
struct SolveCounters {
  long factorizations = 0;
  long solve_batches = 0;
  double factorize_seconds = 0.0;

  void reset() {
    factorizations = 0;
    solve_batches = 0;
    factorize_seconds = 0.0;
  }
};

inline SolveCounters& solve_counters() {
  static SolveCounters counters;
  return counters;
}

}  // namespace irlin
