#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "hblu/csc.hpp"
#include "hblu/gp.hpp"
#include "hblu/numeric.hpp"
#include "hblu/symbolic.hpp"
#include "hblu/synth.hpp"
#include "oracles.hpp"
#include "schedule_sim.hpp"

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

std::vector<index_t> tree_ancestors(const NdTree& t, index_t x) {
  std::vector<index_t> anc;
  for (index_t p = t.nodes[x].parent; p >= 0; p = t.nodes[p].parent)
    anc.push_back(p);
  return anc;
}

// Factor blocks stitched into global unit-diagonal L and upper U in the
// fully pivoted coordinates.
struct GlobalLu {
  CscMatrix l, u;
};

GlobalLu assemble_global(const SymbolicPlan& plan, const NumericFactor& f) {
  const index_t n = plan.n;
  Triplets tl, tu;
  tl.nrows = tl.ncols = n;
  tu.nrows = tu.ncols = n;
  auto add_block = [&](const LuBlock& lu, index_t row0, index_t col0) {
    for (index_t c = 0; c < lu.l.ncols; ++c) {
      for (index_t p = lu.l.col_ptr[c]; p < lu.l.col_ptr[c + 1]; ++p)
        tl.add(row0 + lu.l.row_idx[p], col0 + c, lu.l.values[p]);
      tl.add(row0 + c, col0 + c, 1.0);
      for (index_t p = lu.u.col_ptr[c]; p < lu.u.col_ptr[c + 1]; ++p)
        tu.add(row0 + lu.u.row_idx[p], col0 + c, lu.u.values[p]);
    }
  };
  for (std::size_t i = 0; i < plan.btf_blocks.size(); ++i) {
    REQUIRE_FALSE(f.btf[i].singular);
    const index_t lo = plan.coarse.block_offsets[plan.btf_blocks[i].block];
    add_block(f.btf[i].lu, lo, lo);
  }
  for (std::size_t d = 0; d < plan.nd_domains.size(); ++d) {
    const NdDomainPlan& dp = plan.nd_domains[d];
    const index_t dom_lo = plan.coarse.block_offsets[dp.block];
    for (index_t x = 0; x < dp.tree.nnodes(); ++x) {
      const NdNodeFactor& nf = f.domains[d].nodes[x];
      const index_t base = dom_lo + dp.tree.nodes[x].first_col;
      add_block(nf.diag, base, base);
      const auto anc = tree_ancestors(dp.tree, x);
      for (std::size_t k = 0; k < anc.size(); ++k) {
        const index_t af = dom_lo + dp.tree.nodes[anc[k]].first_col;
        const CscMatrix& lk = nf.lower[k];
        for (index_t c = 0; c < lk.ncols; ++c)
          for (index_t p = lk.col_ptr[c]; p < lk.col_ptr[c + 1]; ++p)
            tl.add(af + lk.row_idx[p], base + c, lk.values[p]);
        const CscMatrix& uk = nf.upper[k];
        for (index_t c = 0; c < uk.ncols; ++c)
          for (index_t p = uk.col_ptr[c]; p < uk.col_ptr[c + 1]; ++p)
            tu.add(base + uk.row_idx[p], af + c, uk.values[p]);
      }
    }
  }
  return {csc_from_triplets(tl), csc_from_triplets(tu)};
}

// Maps a row of the analysis-permuted matrix to its pivoted position.
std::vector<index_t> pattern_to_final(const SymbolicPlan& plan,
                                      const NumericFactor& f) {
  std::vector<index_t> pf(plan.n);
  for (index_t i = 0; i < plan.n; ++i)
    pf[plan.row_perm.forward[i]] = f.perm_rows_final.forward[i];
  return pf;
}

// Reference solve through the assembled factor: block back-substitution over
// the coarse block triangle, dense-vector forward/backward inside each block.
std::vector<double> solve_via_factor(const SymbolicPlan& plan,
                                     const NumericFactor& f,
                                     const std::vector<double>& b) {
  const index_t n = plan.n;
  const GlobalLu g = assemble_global(plan, f);
  const std::vector<index_t> pf = pattern_to_final(plan, f);
  std::vector<double> z(n, 0.0), x(n, 0.0);
  for (index_t i = 0; i < n; ++i) z[f.perm_rows_final.forward[i]] = b[i];
  for (index_t bi = plan.coarse.nblocks() - 1; bi >= 0; --bi) {
    const index_t lo = plan.coarse.block_offsets[bi];
    const index_t hi = plan.coarse.block_offsets[bi + 1];
    for (index_t k = lo; k < hi; ++k) {
      const double zk = z[k];
      if (zk == 0.0) continue;
      for (index_t p = g.l.col_ptr[k]; p < g.l.col_ptr[k + 1]; ++p)
        if (g.l.row_idx[p] != k) z[g.l.row_idx[p]] -= g.l.values[p] * zk;
    }
    for (index_t k = hi - 1; k >= lo; --k) {
      double ukk = 0.0;
      for (index_t p = g.u.col_ptr[k]; p < g.u.col_ptr[k + 1]; ++p)
        if (g.u.row_idx[p] == k) ukk = g.u.values[p];
      REQUIRE(ukk != 0.0);
      x[k] = z[k] / ukk;
      for (index_t p = g.u.col_ptr[k]; p < g.u.col_ptr[k + 1]; ++p)
        if (g.u.row_idx[p] < k) z[g.u.row_idx[p]] -= g.u.values[p] * x[k];
    }
    for (index_t j = lo; j < hi; ++j)
      for (index_t p = f.apc.col_ptr[j]; p < f.apc.col_ptr[j + 1]; ++p)
        if (f.apc.row_idx[p] < lo) z[pf[f.apc.row_idx[p]]] -= f.apc.values[p] * x[j];
  }
  std::vector<double> xo(n);
  for (index_t j = 0; j < n; ++j) xo[j] = x[plan.col_perm.forward[j]];
  return xo;
}

double rel_residual(const CscMatrix& a, const std::vector<double>& x,
                    const std::vector<double>& b) {
  std::vector<double> r = b;
  spmv(a, x.data(), r.data(), -1.0);
  double rn = 0.0, xn = 0.0, bn = 0.0;
  for (index_t i = 0; i < a.nrows; ++i) {
    rn = std::max(rn, std::fabs(r[i]));
    xn = std::max(xn, std::fabs(x[i]));
    bn = std::max(bn, std::fabs(b[i]));
  }
  return rn / (norm_inf(a) * xn + bn);
}

double max_abs_value(const CscMatrix& a) {
  double m = 0.0;
  for (double v : a.values) m = std::max(m, std::fabs(v));
  return m;
}

// Componentwise |L*U - P*A| over each factored diagonal block.
double reassembly_error(const SymbolicPlan& plan, const NumericFactor& f) {
  const index_t n = plan.n;
  const GlobalLu g = assemble_global(plan, f);
  const std::vector<index_t> pf = pattern_to_final(plan, f);
  std::vector<double> w(n, 0.0);
  std::vector<char> seen(n, 0);
  std::vector<index_t> touched;
  double worst = 0.0;
  auto visit = [&](index_t r) {
    if (!seen[r]) {
      seen[r] = 1;
      touched.push_back(r);
    }
  };
  for (index_t bi = 0; bi < plan.coarse.nblocks(); ++bi) {
    const index_t lo = plan.coarse.block_offsets[bi];
    const index_t hi = plan.coarse.block_offsets[bi + 1];
    for (index_t j = lo; j < hi; ++j) {
      touched.clear();
      for (index_t p = g.u.col_ptr[j]; p < g.u.col_ptr[j + 1]; ++p) {
        const index_t k = g.u.row_idx[p];
        const double uv = g.u.values[p];
        for (index_t q = g.l.col_ptr[k]; q < g.l.col_ptr[k + 1]; ++q) {
          const index_t r = g.l.row_idx[q];
          visit(r);
          w[r] += g.l.values[q] * uv;
        }
      }
      for (index_t p = f.apc.col_ptr[j]; p < f.apc.col_ptr[j + 1]; ++p) {
        const index_t q = f.apc.row_idx[p];
        if (q < lo || q >= hi) continue;  // couplings are not factored
        const index_t r = pf[q];
        visit(r);
        w[r] -= f.apc.values[p];
      }
      for (index_t r : touched) {
        worst = std::max(worst, std::fabs(w[r]));
        w[r] = 0.0;
        seen[r] = 0;
      }
    }
  }
  return worst;
}

std::uint64_t factor_checksum(const NumericFactor& f) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const auto& v) {
    if (!v.empty()) h = oracle::fnv1a(v.data(), v.size() * sizeof(v[0]), h);
  };
  auto mix_mat = [&](const CscMatrix& m) {
    mix(m.col_ptr);
    mix(m.row_idx);
    mix(m.values);
  };
  for (const BtfBlockFactor& b : f.btf) {
    mix_mat(b.lu.l);
    mix_mat(b.lu.u);
    mix(b.lu.pivot.forward);
  }
  for (const NdDomainFactor& d : f.domains)
    for (const NdNodeFactor& nf : d.nodes) {
      mix_mat(nf.diag.l);
      mix_mat(nf.diag.u);
      mix(nf.diag.pivot.forward);
      for (const CscMatrix& m : nf.lower) mix_mat(m);
      for (const CscMatrix& m : nf.upper) mix_mat(m);
    }
  mix(f.perm_rows_final.forward);
  return h;
}

// Fine column intervals (small blocks whole; large blocks per tree node),
// used to check that pivoting never crosses a diagonal block boundary.
std::vector<index_t> fine_offsets(const SymbolicPlan& plan) {
  std::vector<index_t> off{0};
  std::size_t dom_i = 0;
  for (index_t b = 0; b < plan.coarse.nblocks(); ++b) {
    if (plan.coarse.block_kind[b] == BlockKind::FineBtf) {
      off.push_back(plan.coarse.block_offsets[b + 1]);
    } else {
      const NdDomainPlan& dp = plan.nd_domains[dom_i++];
      const index_t lo = plan.coarse.block_offsets[b];
      for (const NdNode& nd : dp.tree.nodes)
        if (nd.ncols > 0) off.push_back(lo + nd.first_col + nd.ncols);
    }
  }
  return off;
}

void check_pivot_confinement(const SymbolicPlan& plan,
                             const NumericFactor& f) {
  const std::vector<index_t> off = fine_offsets(plan);
  auto interval_of = [&](index_t q) {
    return std::upper_bound(off.begin(), off.end(), q) - off.begin();
  };
  for (index_t i = 0; i < plan.n; ++i) {
    const index_t q = plan.row_perm.forward[i];
    const index_t fq = f.perm_rows_final.forward[i];
    CHECK(interval_of(q) == interval_of(fq));
  }
}

CscMatrix scaled_copy(const CscMatrix& a, double s) {
  CscMatrix b = a;
  for (double& v : b.values) v *= s;
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("diagonal matrix factors into unit blocks with the values on U") {
  Triplets t;
  t.nrows = t.ncols = 7;
  for (index_t i = 0; i < 7; ++i) t.add(i, i, 2.0 + static_cast<double>(i));
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  REQUIRE(f.btf.size() == 7);
  CHECK_FALSE(f.any_singular);
  CHECK(f.factor_nnz == 7);
  double seen_product = 1.0;
  for (const BtfBlockFactor& b : f.btf) {
    CHECK(b.lu.l.nnz() == 0);
    REQUIRE(b.lu.u.nnz() == 1);
    seen_product *= b.lu.u.values[0];
  }
  CHECK(seen_product == doctest::Approx(2.0 * 3 * 4 * 5 * 6 * 7 * 8));

  const std::vector<double> b = oracle::random_vector(7, 99);
  const std::vector<double> x = solve_via_factor(plan, f, b);
  CHECK(rel_residual(a, x, b) < 1e-15);
}

TEST_CASE("identical independent blocks produce identical factors") {
  // The same irreducible 10-by-10 block twice on the diagonal.
  Triplets blk;
  blk.nrows = blk.ncols = 10;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uval(-1.0, 1.0);
  for (index_t i = 0; i < 10; ++i) {
    blk.add(i, (i + 1) % 10, uval(rng));
    blk.add(i, (i + 3) % 10, uval(rng));
    blk.add(i, i, 4.0);
  }
  Triplets t;
  t.nrows = t.ncols = 20;
  for (index_t k = 0; k < blk.size(); ++k) {
    t.add(blk.row[k], blk.col[k], blk.val[k]);
    t.add(10 + blk.row[k], 10 + blk.col[k], blk.val[k]);
  }
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 2, 2);
  REQUIRE(plan.btf_blocks.size() == 2);
  NumericOptions opt;
  opt.threads = 2;
  NumericFactor f = factor_numeric(plan, a, opt);
  REQUIRE(f.btf.size() == 2);
  CHECK(same_matrix(f.btf[0].lu.l, f.btf[1].lu.l));
  CHECK(same_matrix(f.btf[0].lu.u, f.btf[1].lu.u));
  CHECK(f.btf[0].lu.pivot.forward == f.btf[1].lu.pivot.forward);
}

TEST_CASE("independent-block path matches a dense elimination oracle") {
  const CscMatrix a = synth_block_diag(6, 10, 2.0, 42);
  REQUIRE(a.nrows == 60);
  const std::vector<double> b = oracle::random_vector(60, 5);
  std::vector<double> x_ref;
  REQUIRE(oracle::dense_solve(oracle::dense_from_csc(a), b, x_ref));

  for (index_t threads : {index_t{1}, index_t{2}}) {
    const SymbolicPlan plan = analyze(a, threads, 2);
    NumericOptions opt;
    opt.threads = threads;
    NumericFactor f = factor_numeric(plan, a, opt);
    CHECK_FALSE(f.any_singular);
    CHECK(reassembly_error(plan, f) <= 1e-10 * max_abs_value(a));
    const std::vector<double> x = solve_via_factor(plan, f, b);
    double worst = 0.0;
    for (index_t i = 0; i < 60; ++i)
      worst = std::max(worst, std::fabs(x[i] - x_ref[i]) /
                                  std::max(1.0, std::fabs(x_ref[i])));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("decoupled domain equals independent per-block factorizations") {
  // Two disconnected diagonally dominant blocks, factored as one cooperative
  // domain: the separator is empty and each leaf must reproduce exactly what
  // a standalone factorization of its block computes.
  Triplets blk;
  blk.nrows = blk.ncols = 12;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uval(-1.0, 1.0);
  Triplets t;
  t.nrows = t.ncols = 24;
  for (index_t h = 0; h < 2; ++h) {
    const index_t lo = 12 * h;
    for (index_t i = 0; i < 12; ++i) {
      t.add(lo + i, lo + (i + 1) % 12, uval(rng));
      t.add(lo + (i + 1) % 12, lo + i, uval(rng));
      t.add(lo + i, lo + i, 5.0);
    }
  }
  const CscMatrix a = csc_from_triplets(t);
  const SymbolicPlan plan = analyze(a, 2, 2, 0, /*no_btf=*/true);
  REQUIRE(plan.nd_domains.size() == 1);
  const NdDomainPlan& dp = plan.nd_domains[0];
  REQUIRE(dp.tree.nleaves() == 2);

  NumericOptions opt;
  opt.threads = 2;
  NumericFactor f = factor_numeric(plan, a, opt);
  NumericOptions opt1;
  opt1.threads = 1;
  NumericFactor f1 = factor_numeric(plan, a, opt1);
  CHECK(factor_checksum(f) == factor_checksum(f1));

  for (index_t leaf : dp.tree.leaves) {
    const NdNode& nd = dp.tree.nodes[leaf];
    REQUIRE(nd.ncols == 12);
    // Extract the leaf's diagonal block from the analysis-permuted matrix.
    Triplets sub;
    sub.nrows = sub.ncols = nd.ncols;
    for (index_t j = 0; j < nd.ncols; ++j) {
      const index_t col = nd.first_col + j;
      for (index_t p = f.apc.col_ptr[col]; p < f.apc.col_ptr[col + 1]; ++p) {
        const index_t r = f.apc.row_idx[p] - nd.first_col;
        REQUIRE(r >= 0);
        REQUIRE(r < nd.ncols);
        sub.add(r, j, f.apc.values[p]);
      }
    }
    const CscMatrix sa = csc_from_triplets(sub);
    const NdNodePlan& np = dp.nodes[leaf];
    GpStats ref_stats;
    LuBlock ref = factor_block_gp(sa, 0.001, ref_stats, np.alloc_l, np.alloc_u);
    const NdNodeFactor& nf = f.domains[0].nodes[leaf];
    CHECK(same_matrix(ref.l, nf.diag.l));
    CHECK(same_matrix(ref.u, nf.diag.u));
    CHECK(ref.pivot.forward == nf.diag.pivot.forward);
  }

  // The root separator is empty: exactly one worker factored it, trivially.
  const index_t root = dp.tree.root();
  CHECK(dp.tree.nodes[root].ncols == 0);
  const std::vector<double> b = oracle::random_vector(24, 3);
  const std::vector<double> x = solve_via_factor(plan, f, b);
  CHECK(rel_residual(a, x, b) <= 1e-12);
}

TEST_CASE("mesh factorization is accurate, in budget, and deterministic") {
  const CscMatrix a = synth_grid5(8);  // n = 64
  const SymbolicPlan plan = analyze(a, 4, 4, 16);
  REQUIRE(plan.nd_domains.size() == 1);

  const std::vector<double> b = oracle::random_vector(64, 17);
  std::vector<std::uint64_t> sums;
  for (index_t threads : {index_t{1}, index_t{2}, index_t{3}, index_t{4},
                          index_t{8}}) {
    NumericOptions opt;
    opt.threads = threads;
    NumericFactor f = factor_numeric(plan, a, opt);
    CHECK_FALSE(f.any_singular);
    const std::vector<double> x = solve_via_factor(plan, f, b);
    CHECK(rel_residual(a, x, b) <= 1e-12);
    CHECK(reassembly_error(plan, f) <= 1e-10 * max_abs_value(a));
    CHECK(f.reallocs == 0);
    check_pivot_confinement(plan, f);
    sums.push_back(factor_checksum(f));
  }
  for (std::size_t i = 1; i < sums.size(); ++i) CHECK(sums[i] == sums[0]);

  // Numeric fill stays within the per-block symbolic budget.
  NumericFactor f = factor_numeric(plan, a);
  const NdDomainPlan& dp = plan.nd_domains[0];
  for (index_t x = 0; x < dp.tree.nnodes(); ++x) {
    const NdNodeFactor& nf = f.domains[0].nodes[x];
    const NdNodePlan& np = dp.nodes[x];
    CHECK(nf.diag.l.nnz() <= np.alloc_l);
    CHECK(nf.diag.u.nnz() <= np.alloc_u);
    for (std::size_t k = 0; k < nf.lower.size(); ++k) {
      CHECK(nf.lower[k].nnz() <= np.lower[k].alloc);
      CHECK(nf.upper[k].nnz() <= np.upper[k].alloc);
    }
  }
}

TEST_CASE("wide separators cross several synchronization windows") {
  const CscMatrix a = synth_grid5(72);  // n = 5184, root separator > 64 cols
  const SymbolicPlan plan = analyze(a, 4, 4, 64);
  REQUIRE(plan.nd_domains.size() == 1);
  index_t widest = 0;
  for (const NdNode& nd : plan.nd_domains[0].tree.nodes)
    widest = std::max(widest, nd.ncols);
  REQUIRE(widest > kSyncWindow);

  const std::vector<double> b = oracle::random_vector(a.nrows, 23);
  NumericOptions opt1, opt4;
  opt1.threads = 1;
  opt4.threads = 4;
  NumericFactor f1 = factor_numeric(plan, a, opt1);
  NumericFactor f4 = factor_numeric(plan, a, opt4);
  CHECK(factor_checksum(f1) == factor_checksum(f4));
  const std::vector<double> x = solve_via_factor(plan, f4, b);
  CHECK(rel_residual(a, x, b) <= 1e-12);
  CHECK(f4.reallocs == 0);
}

TEST_CASE("contribution reduction leaves a bare column untouched") {
  SparseAccumulator spa;
  spa.init(5);
  spa.new_column();
  spa.touch(1);
  spa.val[1] = 3.5;
  spa.touch(4);
  spa.val[4] = -2.0;
  GpStats st;
  std::vector<ContributionTerm> terms;
  reduce_contribution(spa, terms, st);
  REQUIRE(spa.pattern.size() == 2);
  CHECK(spa.val[1] == 3.5);
  CHECK(spa.val[4] == -2.0);
}

TEST_CASE("contribution reduction applies one product exactly") {
  // L is 3x2: col0 = {1: 2.0, 2: -1.0}, col1 = {2: 3.0}.
  ColumnStore ls;
  ls.init(3, 2, 8);
  {
    const index_t r0[] = {1, 2};
    const double v0[] = {2.0, -1.0};
    ls.push_column(0, r0, v0, 2);
    const index_t r1[] = {2};
    const double v1[] = {3.0};
    ls.push_column(1, r1, v1, 1);
  }
  // U column hits both L columns: rows {0, 1}, values {4.0, 5.0}.
  const index_t urows[] = {0, 1};
  const double uvals[] = {4.0, 5.0};

  SparseAccumulator spa;
  spa.init(3);
  spa.new_column();
  for (index_t r = 0; r < 3; ++r) {
    spa.touch(r);
    spa.val[r] = 10.0 * static_cast<double>(r + 1);
  }
  GpStats st;
  std::vector<ContributionTerm> terms{{0, &ls, urows, uvals, 2}};
  reduce_contribution(spa, terms, st);
  CHECK(spa.val[0] == 10.0);                        // untouched row
  CHECK(spa.val[1] == 20.0 - 2.0 * 4.0);            // 12
  CHECK(spa.val[2] == 30.0 + 1.0 * 4.0 - 3.0 * 5.0);  // 19
}

TEST_CASE("contribution reduction matches dense accumulation and ignores term order") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uval(-1.0, 1.0);
  const index_t n = 30;

  // Three stores with random sparse columns; term t applies store t's
  // columns listed in its private index/value arrays.
  std::vector<ColumnStore> stores(3);
  std::vector<std::vector<std::vector<index_t>>> pat(3);
  std::vector<std::vector<std::vector<double>>> val(3);
  for (index_t s = 0; s < 3; ++s) {
    stores[s].init(n, 4, 64);
    pat[s].resize(4);
    val[s].resize(4);
    for (index_t c = 0; c < 4; ++c) {
      for (index_t r = 0; r < n; ++r)
        if ((rng() & 3) == 0) {
          pat[s][c].push_back(r);
          val[s][c].push_back(uval(rng));
        }
      stores[s].push_column(c, pat[s][c].data(), val[s][c].data(),
                            static_cast<index_t>(pat[s][c].size()));
    }
  }
  std::vector<std::vector<index_t>> turows(3);
  std::vector<std::vector<double>> tuvals(3);
  for (index_t s = 0; s < 3; ++s)
    for (index_t c = 0; c < 4; ++c)
      if ((rng() & 1) == 0) {
        turows[s].push_back(c);
        tuvals[s].push_back(uval(rng));
      }

  // Dense reference.
  std::vector<double> ref(n, 0.0);
  for (index_t r = 0; r < n; ++r) ref[r] = std::sin(static_cast<double>(r));
  for (index_t s = 0; s < 3; ++s)
    for (std::size_t q = 0; q < turows[s].size(); ++q) {
      const index_t c = turows[s][q];
      for (std::size_t e = 0; e < pat[s][c].size(); ++e)
        ref[pat[s][c][e]] -= val[s][c][e] * tuvals[s][q];
    }

  auto run = [&](const std::vector<index_t>& order) {
    SparseAccumulator spa;
    spa.init(n);
    spa.new_column();
    for (index_t r = 0; r < n; ++r) {
      spa.touch(r);
      spa.val[r] = std::sin(static_cast<double>(r));
    }
    GpStats st;
    std::vector<ContributionTerm> terms;
    for (index_t s : order)
      terms.push_back({s, &stores[s], turows[s].data(), tuvals[s].data(),
                       static_cast<index_t>(turows[s].size())});
    reduce_contribution(spa, terms, st);
    std::vector<double> out(n, 0.0);
    for (index_t r = 0; r < n; ++r) out[r] = spa.val[r];
    return out;
  };

  const std::vector<double> o1 = run({0, 1, 2});
  const std::vector<double> o2 = run({2, 0, 1});
  const std::vector<double> o3 = run({1, 2, 0});
  for (index_t r = 0; r < n; ++r) {
    CHECK(std::fabs(o1[r] - ref[r]) <= 1e-14);
    CHECK(o1[r] == o2[r]);  // canonical order makes arrival order irrelevant
    CHECK(o1[r] == o3[r]);
  }
}

TEST_CASE("same-pattern refactorization is exact and reuses memory") {
  const CscMatrix a = synth_grid5(10);  // n = 100
  const SymbolicPlan plan = analyze(a, 2, 4, 16);
  NumericOptions opt;
  opt.threads = 2;

  NumericFactor f_ref = factor_numeric(plan, a, opt);
  const std::uint64_t sum_ref = factor_checksum(f_ref);

  NumericFactor f = factor_numeric(plan, a, opt);
  refactor(plan, f, a, opt);
  CHECK(factor_checksum(f) == sum_ref);
  CHECK(f.reallocs == 0);

  // Doubling every value doubles U exactly, leaves L and pivots unchanged.
  const CscMatrix a2 = scaled_copy(a, 2.0);
  refactor(plan, f, a2, opt);
  REQUIRE(f.domains.size() == f_ref.domains.size());
  for (std::size_t d = 0; d < f.domains.size(); ++d)
    for (std::size_t x = 0; x < f.domains[d].nodes.size(); ++x) {
      const NdNodeFactor& nf = f.domains[d].nodes[x];
      const NdNodeFactor& nr = f_ref.domains[d].nodes[x];
      CHECK(same_matrix(nf.diag.l, nr.diag.l));
      CHECK(nf.diag.pivot.forward == nr.diag.pivot.forward);
      REQUIRE(same_pattern(nf.diag.u, nr.diag.u));
      for (std::size_t p = 0; p < nf.diag.u.values.size(); ++p)
        CHECK(nf.diag.u.values[p] == 2.0 * nr.diag.u.values[p]);
      for (std::size_t k = 0; k < nf.lower.size(); ++k) {
        CHECK(same_matrix(nf.lower[k], nr.lower[k]));
        REQUIRE(same_pattern(nf.upper[k], nr.upper[k]));
        for (std::size_t p = 0; p < nf.upper[k].values.size(); ++p)
          CHECK(nf.upper[k].values[p] == 2.0 * nr.upper[k].values[p]);
      }
    }

  // A sequence of same-pattern perturbations stays accurate.
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> bump(-0.01, 0.01);
  for (int it = 0; it < 20; ++it) {
    CscMatrix ap = a;
    for (double& v : ap.values) v *= 1.0 + bump(rng);
    refactor(plan, f, ap, opt);
    const std::vector<double> b = oracle::random_vector(100, 1000 + it);
    const std::vector<double> x = solve_via_factor(plan, f, b);
    CHECK(rel_residual(ap, x, b) <= 1e-10);
    CHECK(f.reallocs == 0);
  }

  // Pattern changes are rejected before any numeric work.
  CscMatrix extra = a;
  Triplets t;
  t.nrows = t.ncols = 100;
  for (index_t j = 0; j < extra.ncols; ++j)
    for (index_t p = extra.col_ptr[j]; p < extra.col_ptr[j + 1]; ++p)
      t.add(extra.row_idx[p], j, extra.values[p]);
  t.add(0, 99, 0.5);  // grid has no such entry
  const CscMatrix a_extra = csc_from_triplets(t);
  CHECK_THROWS_AS(refactor(plan, f, a_extra, opt), Error);
}

TEST_CASE("numeric rank deficiency: independent blocks record, domains throw") {
  // [[1,1],[1,1]] is structurally sound but numerically singular.
  Triplets t;
  t.nrows = t.ncols = 3;
  t.add(0, 0, 1.0);
  t.add(0, 1, 1.0);
  t.add(1, 0, 1.0);
  t.add(1, 1, 1.0);
  t.add(2, 2, 5.0);
  const CscMatrix a = csc_from_triplets(t);

  const SymbolicPlan plan = analyze(a, 1, 2);
  NumericFactor f = factor_numeric(plan, a);
  CHECK(f.any_singular);
  index_t n_singular = 0;
  double healthy = 0.0;
  for (const BtfBlockFactor& b : f.btf) {
    if (b.singular)
      n_singular++;
    else if (b.lu.u.nnz() == 1)
      healthy = b.lu.u.values[0];
  }
  CHECK(n_singular == 1);
  CHECK(healthy == 5.0);

  // The cooperative path aborts with the offending column instead.
  Triplets t2;
  t2.nrows = t2.ncols = 4;
  t2.add(0, 0, 3.0);
  t2.add(0, 1, 1.0);
  t2.add(1, 0, 1.0);
  t2.add(1, 1, 3.0);
  t2.add(2, 2, 1.0);
  t2.add(2, 3, 1.0);
  t2.add(3, 2, 1.0);
  t2.add(3, 3, 1.0);  // second block singular
  const CscMatrix a2 = csc_from_triplets(t2);
  const SymbolicPlan plan2 = analyze(a2, 2, 2, 0, /*no_btf=*/true);
  NumericOptions opt;
  opt.threads = 2;
  CHECK_THROWS_AS(factor_numeric(plan2, a2, opt), SingularError);
}

TEST_CASE("worker schedules complete and respect their dependency sets") {
  for (index_t leaves : {index_t{2}, index_t{4}, index_t{8}, index_t{16}}) {
    const index_t k = leaves >= 8 ? 24 : 12;
    const CscMatrix a = synth_grid5(k);
    const SymbolicPlan plan = analyze(a, leaves, leaves, 8);
    REQUIRE(plan.nd_domains.size() == 1);
    const NdDomainPlan& dp = plan.nd_domains[0];
    REQUIRE(dp.deps.nworkers == leaves);
    const auto traces = worker_sync_traces(dp);
    REQUIRE(traces.size() == static_cast<std::size_t>(leaves));
    const sim::SimReport rep = sim::simulate(traces, dp.deps);
    INFO(rep.detail);
    CHECK(rep.completed);
    CHECK(rep.single_writer);
    CHECK(rep.waits_allowed);
    CHECK(rep.diag_by_leader);
  }
}

TEST_CASE("mixed structure: independent blocks, couplings, and a domain") {
  // Small independent blocks plus one mesh block large enough for the
  // cooperative path, coupled above the diagonal.
  const CscMatrix grid = synth_grid5(8);  // n = 64 cooperative part
  Triplets t;
  const index_t small_n = 30;
  t.nrows = t.ncols = small_n + 64;
  {
    const CscMatrix small = synth_block_diag(6, 5, 1.5, 3);
    for (index_t j = 0; j < small.ncols; ++j)
      for (index_t p = small.col_ptr[j]; p < small.col_ptr[j + 1]; ++p)
        t.add(small.row_idx[p], j, small.values[p]);
  }
  for (index_t j = 0; j < 64; ++j)
    for (index_t p = grid.col_ptr[j]; p < grid.col_ptr[j + 1]; ++p)
      t.add(small_n + grid.row_idx[p], small_n + j, grid.values[p]);
  // Couplings from the small rows into the mesh columns.
  t.add(3, small_n + 10, 0.25);
  t.add(11, small_n + 40, -0.5);
  t.add(27, small_n + 63, 0.125);
  const CscMatrix a = csc_from_triplets(t);

  const SymbolicPlan plan = analyze(a, 2, 2, 16);
  REQUIRE(plan.nd_domains.size() == 1);
  REQUIRE(plan.btf_blocks.size() >= 6);
  NumericOptions opt;
  opt.threads = 2;
  NumericFactor f = factor_numeric(plan, a, opt);
  CHECK_FALSE(f.any_singular);
  CHECK(reassembly_error(plan, f) <= 1e-10 * max_abs_value(a));
  check_pivot_confinement(plan, f);

  const std::vector<double> b = oracle::random_vector(a.nrows, 8);
  const std::vector<double> x = solve_via_factor(plan, f, b);
  CHECK(rel_residual(a, x, b) <= 1e-12);

  // Refactorization with the same values reproduces the factor bitwise.
  const std::uint64_t before = factor_checksum(f);
  refactor(plan, f, a, opt);
  CHECK(factor_checksum(f) == before);
}
