#pragma once

#include <vector>

#include "hblu/numeric.hpp"

namespace hblu {

// Per-sweep work tally. Triangular substitution touches every stored factor
// entry exactly once, and every coupling entry of the permuted matrix exactly
// once; callers can verify that against NumericFactor::factor_nnz.
struct SolveCounters {
  index_t factor_entries = 0;
  index_t coupling_entries = 0;
};

// Solves A x = b through a completed factor. Single-threaded and read-only
// on the factor: concurrent calls on one factor are safe. Rejects factors
// with singular blocks and mismatched lengths.
std::vector<double> solve(const NumericFactor& f, const std::vector<double>& b,
                          SolveCounters* counters = nullptr);

struct RefineResult {
  std::vector<double> x;
  index_t iterations = 0;  // correction steps actually applied
  bool diverged = false;   // a step increased the residual
  double residual = 0.0;   // final max-norm residual of the returned iterate
};

// Refines x <- x + solve(b - A x) at most max_iters times, stopping when the
// max-norm residual stops decreasing. Never returns an iterate worse than
// the plain solve: on divergence the best iterate is returned with the flag
// set.
RefineResult iterative_refine(const NumericFactor& f, const CscMatrix& a,
                              const std::vector<double>& b, index_t max_iters);

}  // namespace hblu
