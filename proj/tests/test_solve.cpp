#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>
#include <vector>

#include "hblu/csc.hpp"
#include "hblu/numeric.hpp"
#include "hblu/solve.hpp"
#include "hblu/symbolic.hpp"
#include "hblu/synth.hpp"
#include "oracles.hpp"

using namespace hblu;

namespace {

SymbolicPlan analyze(const CscMatrix& a, index_t threads, index_t nd_leaves,
                     index_t nd_threshold = 0, bool no_btf = false) {
  SymbolicOptions opt;
  opt.threads = threads;
  opt.nd_leaves = nd_leaves;
  opt.nd_threshold = nd_threshold;
  opt.no_btf = no_btf;
  return symbolic_analyze(a, opt);
}

double max_err_vs_ones(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v - 1.0));
  return m;
}

std::vector<double> times_ones(const CscMatrix& a) {
  std::vector<double> ones(a.ncols, 1.0), b(a.nrows, 0.0);
  spmv(a, ones.data(), b.data());
  return b;
}

double residual_norm(const CscMatrix& a, const std::vector<double>& x,
                     const std::vector<double>& b) {
  std::vector<double> r = b;
  spmv(a, x.data(), r.data(), -1.0);
  double m = 0.0;
  for (double v : r) m = std::max(m, std::fabs(v));
  return m;
}

index_t count_couplings(const NumericFactor& f) {
  const SymbolicPlan& plan = *f.plan;
  index_t total = 0;
  for (index_t bi = 0; bi < plan.coarse.nblocks(); ++bi) {
    const index_t lo = plan.coarse.block_offsets[bi];
    const index_t hi = plan.coarse.block_offsets[bi + 1];
    for (index_t j = lo; j < hi; ++j)
      for (index_t p = f.apc.col_ptr[j]; p < f.apc.col_ptr[j + 1]; ++p)
        if (f.apc.row_idx[p] < lo) total++;
  }
  return total;
}

}  // namespace

TEST_CASE("identity solves to the right-hand side exactly") {
  Triplets t;
  t.nrows = t.ncols = 9;
  for (index_t i = 0; i < 9; ++i) t.add(i, i, 1.0);
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  const std::vector<double> b = oracle::random_vector(9, 4);
  const std::vector<double> x = solve(f, b);
  for (index_t i = 0; i < 9; ++i) CHECK(x[i] == b[i]);
}

TEST_CASE("diagonal systems solve componentwise") {
  Triplets t;
  t.nrows = t.ncols = 6;
  const double d[] = {2.0, -3.0, 0.5, 8.0, -0.25, 7.0};
  for (index_t i = 0; i < 6; ++i) t.add(i, i, d[i]);
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  const std::vector<double> b = oracle::random_vector(6, 5);
  const std::vector<double> x = solve(f, b);
  for (index_t i = 0; i < 6; ++i) CHECK(x[i] == b[i] / d[i]);
}

TEST_CASE("manufactured solutions are recovered across the synthetic suite") {
  struct Case {
    CscMatrix a;
    index_t threads;
    index_t nd_leaves;
    index_t nd_threshold;
    bool no_btf;
  };
  std::vector<Case> cases;
  cases.push_back({synth_grid5(8), 1, 2, 16, false});
  cases.push_back({synth_grid5(16), 2, 4, 16, false});
  cases.push_back({synth_grid5(31), 4, 4, 64, false});
  cases.push_back({synth_block_diag(12, 8, 2.0, 21), 2, 2, 0, false});
  cases.push_back({synth_block_diag(40, 3, 1.0, 77), 4, 2, 0, false});
  cases.push_back({synth_arrowhead(150), 2, 2, 32, false});
  cases.push_back({synth_random_nonsingular(80, 0.08, 13), 2, 2, 0, false});
  cases.push_back({synth_grid5(10), 2, 4, 0, true});

  for (const Case& c : cases) {
    const SymbolicPlan plan = analyze(c.a, c.threads, c.nd_leaves,
                                      c.nd_threshold, c.no_btf);
    NumericOptions opt;
    opt.threads = c.threads;
    NumericFactor f = factor_numeric(plan, c.a, opt);
    const std::vector<double> b = times_ones(c.a);
    const std::vector<double> x = solve(f, b);
    CAPTURE(c.a.nrows);
    CHECK(max_err_vs_ones(x) <= 1e-8);
  }
}

TEST_CASE("each substitution sweep touches every factor entry exactly once") {
  // A structure with all three behaviors: small blocks, couplings, a domain.
  const CscMatrix grid = synth_grid5(8);
  Triplets t;
  t.nrows = t.ncols = 30 + 64;
  {
    const CscMatrix small = synth_block_diag(6, 5, 1.5, 3);
    for (index_t j = 0; j < small.ncols; ++j)
      for (index_t p = small.col_ptr[j]; p < small.col_ptr[j + 1]; ++p)
        t.add(small.row_idx[p], j, small.values[p]);
  }
  for (index_t j = 0; j < 64; ++j)
    for (index_t p = grid.col_ptr[j]; p < grid.col_ptr[j + 1]; ++p)
      t.add(30 + grid.row_idx[p], 30 + j, grid.values[p]);
  t.add(5, 30 + 20, 0.75);
  t.add(17, 30 + 50, -0.25);
  const CscMatrix a = csc_from_triplets(t);

  const SymbolicPlan plan = analyze(a, 2, 2, 16);
  NumericFactor f = factor_numeric(plan, a);
  const std::vector<double> b = times_ones(a);
  SolveCounters ct;
  const std::vector<double> x = solve(f, b, &ct);
  CHECK(ct.factor_entries == f.factor_nnz);
  CHECK(ct.coupling_entries == count_couplings(f));
  CHECK(max_err_vs_ones(x) <= 1e-8);
}

TEST_CASE("factors with singular blocks refuse to solve") {
  Triplets t;
  t.nrows = t.ncols = 3;
  t.add(0, 0, 1.0);
  t.add(0, 1, 1.0);
  t.add(1, 0, 1.0);
  t.add(1, 1, 1.0);  // numerically singular 2x2 block
  t.add(2, 2, 5.0);
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  REQUIRE(f.any_singular);
  const std::vector<double> b(3, 1.0);
  CHECK_THROWS_AS(solve(f, b), Error);
}

TEST_CASE("refinement stops immediately on an exact factor") {
  Triplets t;
  t.nrows = t.ncols = 5;
  for (index_t i = 0; i < 5; ++i) t.add(i, i, 2.0 + static_cast<double>(i));
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  const std::vector<double> b = oracle::random_vector(5, 2);
  const RefineResult res = iterative_refine(f, a, b, 10);
  CHECK(res.iterations == 0);
  CHECK_FALSE(res.diverged);
  CHECK(res.residual == 0.0);
}

TEST_CASE("refinement with a stale factor reduces the residual monotonically") {
  const CscMatrix a = synth_grid5(12);
  const SymbolicPlan plan = analyze(a, 2, 4, 16);
  // Factor a perturbed copy, then solve the original system through it.
  CscMatrix ap = a;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> bump(-0.001, 0.001);
  for (double& v : ap.values) v *= 1.0 + bump(rng);
  NumericFactor f = factor_numeric(plan, ap);

  const std::vector<double> b = times_ones(a);
  const RefineResult r0 = iterative_refine(f, a, b, 0);
  const RefineResult r1 = iterative_refine(f, a, b, 1);
  const RefineResult r8 = iterative_refine(f, a, b, 8);
  CHECK(r1.residual <= r0.residual);
  CHECK(r8.residual <= r1.residual);
  CHECK(r8.iterations >= 1);
  CHECK(max_err_vs_ones(r8.x) <= 1e-8);
  CHECK_FALSE(r8.diverged);
}

TEST_CASE("refinement never returns a worse iterate than the plain solve") {
  // Badly scaled rows make the plain solve lose digits; refinement must not
  // hand back anything worse than its own starting point.
  const CscMatrix base = synth_random_nonsingular(40, 0.1, 9);
  Triplets t;
  t.nrows = t.ncols = 40;
  for (index_t j = 0; j < 40; ++j)
    for (index_t p = base.col_ptr[j]; p < base.col_ptr[j + 1]; ++p) {
      const double s = base.row_idx[p] % 2 ? 1e-6 : 1e6;
      t.add(base.row_idx[p], j, base.values[p] * s);
    }
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  const std::vector<double> b = oracle::random_vector(40, 77);
  const std::vector<double> x0 = solve(f, b);
  const RefineResult res = iterative_refine(f, a, b, 6);
  CHECK(res.residual <= residual_norm(a, x0, b));
}

TEST_CASE("concurrent solves on one factor agree with serial answers") {
  const CscMatrix a = synth_grid5(12);
  const SymbolicPlan plan = analyze(a, 2, 4, 16);
  NumericOptions opt;
  opt.threads = 2;
  NumericFactor f = factor_numeric(plan, a, opt);

  std::vector<std::vector<double>> rhs, serial(4), parallel(4);
  for (int i = 0; i < 4; ++i)
    rhs.push_back(oracle::random_vector(a.nrows, 100 + i));
  for (int i = 0; i < 4; ++i) serial[i] = solve(f, rhs[i]);
  std::vector<std::thread> team;
  for (int i = 0; i < 4; ++i)
    team.emplace_back([&, i] { parallel[i] = solve(f, rhs[i]); });
  for (auto& th : team) th.join();
  for (int i = 0; i < 4; ++i) CHECK(serial[i] == parallel[i]);
}
