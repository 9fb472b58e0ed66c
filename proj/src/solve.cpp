#include "hblu/solve.hpp"

#include <algorithm>
#include <cmath>

#include "hblu/symbolic.hpp"

namespace hblu {

namespace {

// Forward then backward substitution through one small-block LU whose rows
// and columns live at global offset `lo`. z enters as the permuted rhs slice
// and leaves holding the block's solution.
void solve_lu_block(const LuBlock& lu, index_t lo, std::vector<double>& z,
                    SolveCounters& ct) {
  const index_t m = lu.l.ncols;
  for (index_t c = 0; c < m; ++c) {
    const double zc = z[lo + c];
    if (zc != 0.0)
      for (index_t p = lu.l.col_ptr[c]; p < lu.l.col_ptr[c + 1]; ++p)
        z[lo + lu.l.row_idx[p]] -= lu.l.values[p] * zc;
  }
  ct.factor_entries += lu.l.nnz();
  for (index_t c = m - 1; c >= 0; --c) {
    // Columns are sorted by row, so the diagonal is the last entry.
    const index_t last = lu.u.col_ptr[c + 1] - 1;
    const double xc = z[lo + c] / lu.u.values[last];
    z[lo + c] = xc;
    if (xc != 0.0)
      for (index_t p = lu.u.col_ptr[c]; p < last; ++p)
        z[lo + lu.u.row_idx[p]] -= lu.u.values[p] * xc;
  }
  ct.factor_entries += lu.u.nnz();
}

// Forward and backward substitution through one cooperative domain: forward
// walks nodes in postorder (descendants first), scattering each node's lower
// blocks into its ancestors; backward walks in reverse, first subtracting
// the node's upper blocks against already-solved ancestor columns.
void solve_domain(const NdDomainPlan& dp, const NdDomainFactor& df,
                  index_t dom_lo, std::vector<double>& z, SolveCounters& ct) {
  const index_t nn = dp.tree.nnodes();
  std::vector<index_t> anc;  // reused ancestor scratch
  for (index_t x = 0; x < nn; ++x) {
    const NdNodeFactor& nf = df.nodes[x];
    const index_t base = dom_lo + dp.tree.nodes[x].first_col;
    const index_t m = dp.tree.nodes[x].ncols;
    anc.clear();
    for (index_t p = dp.tree.nodes[x].parent; p >= 0; p = dp.tree.nodes[p].parent)
      anc.push_back(dom_lo + dp.tree.nodes[p].first_col);
    for (index_t c = 0; c < m; ++c) {
      const double zc = z[base + c];
      if (zc != 0.0) {
        const CscMatrix& l = nf.diag.l;
        for (index_t p = l.col_ptr[c]; p < l.col_ptr[c + 1]; ++p)
          z[base + l.row_idx[p]] -= l.values[p] * zc;
        for (std::size_t k = 0; k < anc.size(); ++k) {
          const CscMatrix& lk = nf.lower[k];
          for (index_t p = lk.col_ptr[c]; p < lk.col_ptr[c + 1]; ++p)
            z[anc[k] + lk.row_idx[p]] -= lk.values[p] * zc;
        }
      }
    }
    ct.factor_entries += nf.diag.l.nnz();
    for (const CscMatrix& lk : nf.lower) ct.factor_entries += lk.nnz();
  }
  for (index_t x = nn - 1; x >= 0; --x) {
    const NdNodeFactor& nf = df.nodes[x];
    const index_t base = dom_lo + dp.tree.nodes[x].first_col;
    const index_t m = dp.tree.nodes[x].ncols;
    anc.clear();
    for (index_t p = dp.tree.nodes[x].parent; p >= 0; p = dp.tree.nodes[p].parent)
      anc.push_back(dom_lo + dp.tree.nodes[p].first_col);
    // Ancestors are fully solved: fold their columns into this node's rows.
    for (std::size_t k = 0; k < anc.size(); ++k) {
      const CscMatrix& uk = nf.upper[k];
      for (index_t c = 0; c < uk.ncols; ++c) {
        const double xa = z[anc[k] + c];
        if (xa != 0.0)
          for (index_t p = uk.col_ptr[c]; p < uk.col_ptr[c + 1]; ++p)
            z[base + uk.row_idx[p]] -= uk.values[p] * xa;
      }
      ct.factor_entries += uk.nnz();
    }
    const CscMatrix& u = nf.diag.u;
    for (index_t c = m - 1; c >= 0; --c) {
      const index_t last = u.col_ptr[c + 1] - 1;
      const double xc = z[base + c] / u.values[last];
      z[base + c] = xc;
      if (xc != 0.0)
        for (index_t p = u.col_ptr[c]; p < last; ++p)
          z[base + u.row_idx[p]] -= u.values[p] * xc;
    }
    ct.factor_entries += u.nnz();
  }
}

}  // namespace

std::vector<double> solve(const NumericFactor& f, const std::vector<double>& b,
                          SolveCounters* counters) {
  if (!f.plan) throw Error(ErrorKind::bad_input, "factor is empty");
  const SymbolicPlan& plan = *f.plan;
  if (static_cast<index_t>(b.size()) != plan.n)
    throw Error(ErrorKind::bad_input, "right-hand side length mismatch");
  if (f.any_singular)
    throw Error(ErrorKind::numerically_singular,
                "factor has singular blocks; cannot solve");

  SolveCounters ct;
  const index_t n = plan.n;
  std::vector<double> z(n, 0.0);
  for (index_t i = 0; i < n; ++i) z[f.perm_rows_final.forward[i]] = b[i];

  // Row of the analysis-permuted matrix -> its pivoted position, for the
  // coupling updates (coupling rows were stored before pivoting).
  std::vector<index_t> pf(n);
  for (index_t i = 0; i < n; ++i)
    pf[plan.row_perm.forward[i]] = f.perm_rows_final.forward[i];

  std::size_t btf_i = f.btf.size();
  std::size_t dom_i = f.domains.size();
  for (index_t bi = plan.coarse.nblocks() - 1; bi >= 0; --bi) {
    const index_t lo = plan.coarse.block_offsets[bi];
    const index_t hi = plan.coarse.block_offsets[bi + 1];
    if (plan.coarse.block_kind[bi] == BlockKind::FineBtf)
      solve_lu_block(f.btf[--btf_i].lu, lo, z, ct);
    else {
      --dom_i;
      solve_domain(plan.nd_domains[dom_i], f.domains[dom_i], lo, z, ct);
    }
    for (index_t j = lo; j < hi; ++j)
      for (index_t p = f.apc.col_ptr[j]; p < f.apc.col_ptr[j + 1]; ++p) {
        const index_t q = f.apc.row_idx[p];
        if (q < lo) {
          z[pf[q]] -= f.apc.values[p] * z[j];
          ct.coupling_entries++;
        }
      }
  }

  std::vector<double> x(n);
  for (index_t j = 0; j < n; ++j) x[j] = z[plan.col_perm.forward[j]];
  if (counters) *counters = ct;
  return x;
}

RefineResult iterative_refine(const NumericFactor& f, const CscMatrix& a,
                              const std::vector<double>& b,
                              index_t max_iters) {
  if (a.nrows != a.ncols ||
      static_cast<index_t>(b.size()) != a.nrows)
    throw Error(ErrorKind::bad_input, "shape mismatch");
  const index_t n = a.nrows;
  auto max_norm = [n](const std::vector<double>& v) {
    double m = 0.0;
    for (index_t i = 0; i < n; ++i) m = std::max(m, std::fabs(v[i]));
    return m;
  };
  auto residual_of = [&](const std::vector<double>& x) {
    std::vector<double> r = b;
    spmv(a, x.data(), r.data(), -1.0);
    return r;
  };

  RefineResult out;
  out.x = solve(f, b);
  std::vector<double> r = residual_of(out.x);
  double rn = max_norm(r);
  out.residual = rn;

  std::vector<double> x = out.x;
  for (index_t it = 0; it < max_iters && rn > 0.0; ++it) {
    const std::vector<double> dx = solve(f, r);
    for (index_t i = 0; i < n; ++i) x[i] += dx[i];
    r = residual_of(x);
    const double rn_new = max_norm(r);
    if (rn_new < rn) {
      out.x = x;
      out.residual = rn_new;
      out.iterations = it + 1;
      rn = rn_new;
    } else {
      if (rn_new > rn) out.diverged = true;
      break;  // stagnated or got worse: keep the best iterate
    }
  }
  return out;
}

}  // namespace hblu
