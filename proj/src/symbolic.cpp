#include "hblu/symbolic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

namespace hblu {

namespace {

std::atomic<index_t> g_symbolic_runs{0};

bool is_pow2(index_t v) { return v > 0 && (v & (v - 1)) == 0; }

index_t pow2_floor(index_t v) {
  index_t p = 1;
  while (p * 2 <= v) p *= 2;
  return p;
}

// Entry budget for an estimated count: headroom is multiplicative, and the
// budget never falls below the estimate itself.
index_t alloc_budget(index_t estimate, double headroom) {
  double b = std::ceil(headroom * static_cast<double>(estimate));
  auto r = static_cast<index_t>(b);
  return std::max(r, estimate);
}

index_t sum_counts(const std::vector<index_t>& v) {
  index_t s = 0;
  for (index_t x : v) s += x;
  return s;
}

// Copies the square diagonal window [lo, lo+m) of `a` into a block-local CSC.
CscMatrix extract_square(const CscMatrix& a, index_t lo, index_t m) {
  CscMatrix b;
  b.nrows = m;
  b.ncols = m;
  b.col_ptr.assign(m + 1, 0);
  for (index_t j = 0; j < m; ++j) {
    auto rows = a.col_rows(lo + j);
    auto vals = a.col_values(lo + j);
    const index_t* first = std::lower_bound(rows.data(), rows.data() + rows.size(), lo);
    for (const index_t* p = first; p != rows.data() + rows.size() && *p < lo + m; ++p) {
      b.row_idx.push_back(*p - lo);
      b.values.push_back(vals[p - rows.data()]);
    }
    b.col_ptr[j + 1] = static_cast<index_t>(b.row_idx.size());
  }
  return b;
}

// Appends the rows of a(row_lo..row_hi, gcol), shifted by -row_lo.
void slice_col(const CscMatrix& a, index_t gcol, index_t row_lo, index_t row_hi,
               std::vector<index_t>& out) {
  auto rows = a.col_rows(gcol);
  const index_t* first = std::lower_bound(rows.data(), rows.data() + rows.size(), row_lo);
  for (const index_t* p = first; p != rows.data() + rows.size() && *p < row_hi; ++p)
    out.push_back(*p - row_lo);
}

// Builds a pattern-only CSC (unit values) from per-column row lists; each
// list is sorted and deduplicated in place.
CscMatrix assemble_pattern(index_t nrows, std::vector<std::vector<index_t>>& cols) {
  CscMatrix b;
  b.nrows = nrows;
  b.ncols = static_cast<index_t>(cols.size());
  b.col_ptr.assign(cols.size() + 1, 0);
  for (size_t j = 0; j < cols.size(); ++j) {
    std::vector<index_t>& c = cols[j];
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    b.row_idx.insert(b.row_idx.end(), c.begin(), c.end());
    b.col_ptr[j + 1] = static_cast<index_t>(b.row_idx.size());
  }
  b.values.assign(b.row_idx.size(), 1.0);
  return b;
}

void push_interval(RowRange r, std::vector<index_t>& out) {
  if (r.empty()) return;
  for (index_t i = r.lo; i <= r.hi; ++i) out.push_back(i);
}

NdTree single_node_tree(index_t m) {
  NdTree t;
  NdNode n;
  n.first_col = 0;
  n.ncols = m;
  t.nodes.push_back(n);
  t.leaves.push_back(0);
  return t;
}

index_t clamp_leaves(index_t requested, index_t m) {
  index_t cap = pow2_floor(std::max<index_t>(1, m / 2));
  return std::min(requested, cap);
}

// ---------------------------------------------------------------------------
// Per-domain planner: walks the dissection tree bottom-up (postorder ids are
// already bottom-up), computing each node's diagonal symbolic plus its
// off-diagonal blocks against every ancestor. Descendant contributions to
// separator columns enter as dense row intervals derived from the
// descendants' recorded row ranges.
// ---------------------------------------------------------------------------
class NdPlanner {
 public:
  NdPlanner(const CscMatrix& dom, const NdTree& tree, EtreeMode mode, double headroom)
      : dom_(dom), tree_(tree), mode_(mode), headroom_(headroom) {}

  std::vector<NdNodePlan> run() {
    const index_t nn = tree_.nnodes();
    out_.assign(nn, NdNodePlan{});
    depth_.assign(nn, 0);
    for (index_t x = nn - 1; x >= 0; --x) {
      index_t p = tree_.nodes[x].parent;
      depth_[x] = (p == -1) ? 0 : depth_[p] + 1;
    }
    for (index_t x = 0; x < nn; ++x) plan_node(x);
    return std::move(out_);
  }

 private:
  // Position of ancestor `a` in the nearest-first ancestor chain of `d`.
  index_t anc_pos(index_t d, index_t a) const { return depth_[d] - depth_[a] - 1; }

  // Nodes strictly inside x's subtree (postorder ids are contiguous).
  std::pair<index_t, index_t> desc_range(index_t x) const {
    index_t sub = (index_t{2} << tree_.nodes[x].height) - 1;  // perfect subtree
    return {x - sub + 1, x};
  }

  void plan_node(index_t x) {
    const NdNode& nx = tree_.nodes[x];
    const index_t m = nx.ncols;
    const index_t base = nx.first_col;
    auto [dlo, dhi] = desc_range(x);
    NdNodePlan& np = out_[x];

    std::vector<index_t> ancs;
    for (index_t a = nx.parent; a != -1; a = tree_.nodes[a].parent) ancs.push_back(a);

    // Diagonal block: own rows plus a dense interval per descendant whose
    // upper block reaches this column.
    std::vector<std::vector<index_t>> cols(m);
    for (index_t c = 0; c < m; ++c) {
      slice_col(dom_, base + c, base, base + m, cols[c]);
      cols[c].push_back(c);  // diagonal entry is always planned
      for (index_t d = dlo; d < dhi; ++d) {
        RowRange u = out_[d].upper[anc_pos(d, x)].range.col[c];
        if (u.empty()) continue;
        push_interval(product_interval(out_[d].lower[anc_pos(d, x)].range, u), cols[c]);
      }
    }
    CscMatrix adiag = assemble_pattern(m, cols);
    DiagSymbolic ds = diag_symbolic(adiag, mode_, true);
    np.diag_lcount = ds.lcount;
    np.diag_ucount = ds.ucount;
    np.alloc_l = alloc_budget(sum_counts(np.diag_lcount), headroom_);
    np.alloc_u = alloc_budget(sum_counts(np.diag_ucount), headroom_);

    // Lower blocks: rows of each ancestor, this node's columns.
    for (index_t a : ancs) {
      const NdNode& na = tree_.nodes[a];
      cols.assign(m, {});
      for (index_t c = 0; c < m; ++c) {
        slice_col(dom_, base + c, na.first_col, na.first_col + na.ncols, cols[c]);
        for (index_t d = dlo; d < dhi; ++d) {
          RowRange u = out_[d].upper[anc_pos(d, x)].range.col[c];
          if (u.empty()) continue;
          push_interval(product_interval(out_[d].lower[anc_pos(d, a)].range, u), cols[c]);
        }
      }
      CscMatrix alow = assemble_pattern(na.ncols, cols);
      OffBlockSymbolic ls = nd_lower_symbolic(alow, ds);
      NdBlockPlan bp;
      bp.alloc = alloc_budget(sum_counts(ls.count), headroom_);
      bp.count = std::move(ls.count);
      bp.range = std::move(ls.range);
      np.lower.push_back(std::move(bp));
    }

    // Upper blocks: this node's rows, each ancestor's columns.
    for (index_t a : ancs) {
      const NdNode& na = tree_.nodes[a];
      cols.assign(na.ncols, {});
      for (index_t cc = 0; cc < na.ncols; ++cc) {
        slice_col(dom_, na.first_col + cc, base, base + m, cols[cc]);
        for (index_t d = dlo; d < dhi; ++d) {
          RowRange u = out_[d].upper[anc_pos(d, a)].range.col[cc];
          if (u.empty()) continue;
          push_interval(product_interval(out_[d].lower[anc_pos(d, x)].range, u), cols[cc]);
        }
      }
      CscMatrix aup = assemble_pattern(m, cols);
      OffBlockSymbolic us = nd_upper_symbolic(aup, ds.etree);
      NdBlockPlan bp;
      bp.alloc = alloc_budget(sum_counts(us.count), headroom_);
      bp.count = std::move(us.count);
      bp.range = std::move(us.range);
      np.upper.push_back(std::move(bp));
    }

    np.etree = std::move(ds.etree);
  }

  const CscMatrix& dom_;
  const NdTree& tree_;
  EtreeMode mode_;
  double headroom_;
  std::vector<NdNodePlan> out_;
  std::vector<index_t> depth_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Coarse decomposition.
// ---------------------------------------------------------------------------

CoarsePlan coarse_decompose(const CscMatrix& a, index_t nd_threshold) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "coarse decomposition requires a square matrix");
  CoarsePlan p;
  p.nd_threshold = nd_threshold;
  p.perm_mwcm = mwcm(a);
  CscMatrix a1 = permute(a, p.perm_mwcm, Permutation::identity(a.ncols));
  BtfResult btf = btf_scc(a1);
  p.perm_btf = std::move(btf.perm);
  p.block_offsets = std::move(btf.block_ptr);
  p.block_kind.resize(p.block_offsets.size() - 1);
  for (index_t b = 0; b < p.nblocks(); ++b)
    p.block_kind[b] = p.block_size(b) > nd_threshold ? BlockKind::FineNd : BlockKind::FineBtf;
  return p;
}

CoarsePlan coarse_whole_nd(index_t n, index_t nd_threshold) {
  if (n <= 0) throw Error(ErrorKind::bad_input, "matrix must be nonempty");
  CoarsePlan p;
  p.nd_threshold = nd_threshold;
  p.perm_mwcm = Permutation::identity(n);
  p.perm_btf = Permutation::identity(n);
  p.block_offsets = {0, n};
  p.block_kind = {BlockKind::FineNd};
  return p;
}

// ---------------------------------------------------------------------------
// Elimination tree.
// ---------------------------------------------------------------------------

EliminationTree etree_build(const CscMatrix& a, EtreeMode mode) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "elimination tree requires a square matrix");
  const index_t n = a.ncols;
  EliminationTree t;
  t.parent.assign(n, -1);
  std::vector<index_t> ancestor(n, -1);
  // Path-compressed union: every row index seen in column k links its
  // current ancestor chain to k.
  auto link = [&](index_t i, index_t k) {
    while (i != -1 && i < k) {
      index_t next = ancestor[i];
      ancestor[i] = k;
      if (next == -1) t.parent[i] = k;
      i = next;
    }
  };
  if (mode == EtreeMode::PatternSymmetric) {
    CscMatrix s = symmetrized_pattern(a);
    for (index_t k = 0; k < n; ++k)
      for (index_t r : s.col_rows(k))
        if (r < k) link(r, k);
  } else {
    // Tree of A^T A without forming it: rows chain through the last column
    // in which they appeared.
    std::vector<index_t> prev(a.nrows, -1);
    for (index_t k = 0; k < n; ++k)
      for (index_t r : a.col_rows(k)) {
        link(prev[r], k);
        prev[r] = k;
      }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Block symbolic kernels.
// ---------------------------------------------------------------------------

DiagSymbolic diag_symbolic(const CscMatrix& a, EtreeMode mode, bool keep_upper_patterns) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "diagonal symbolic requires a square block");
  const index_t n = a.ncols;
  DiagSymbolic ds;
  ds.lcount.assign(n, 0);
  ds.ucount.assign(n, 0);
  if (keep_upper_patterns) ds.upat.resize(n);
  std::vector<std::vector<index_t>> lpat(n);  // strictly-below pattern per column
  std::vector<index_t> urow(n, 0), mark(n, -1);
  std::vector<index_t> node_stk, iter_stk, upper, lower;
  for (index_t c = 0; c < n; ++c) {
    upper.clear();
    lower.clear();
    for (index_t r : a.col_rows(c)) {
      if (mark[r] == c) continue;
      mark[r] = c;
      if (r >= c) {
        lower.push_back(r);
        continue;
      }
      // Depth-first reach through the strictly-lower patterns of columns
      // already factored; indices at or past c are sinks.
      node_stk.assign(1, r);
      iter_stk.assign(1, 0);
      while (!node_stk.empty()) {
        index_t t = node_stk.back();
        index_t i = iter_stk.back();
        if (i < static_cast<index_t>(lpat[t].size())) {
          iter_stk.back() = i + 1;
          index_t s = lpat[t][i];
          if (mark[s] == c) continue;
          mark[s] = c;
          if (s >= c) {
            lower.push_back(s);
          } else {
            node_stk.push_back(s);
            iter_stk.push_back(0);
          }
        } else {
          node_stk.pop_back();
          iter_stk.pop_back();
          upper.push_back(t);
        }
      }
    }
    if (mark[c] != c) {
      mark[c] = c;
      lower.push_back(c);  // zero-free diagonal is assumed
    }
    ds.lcount[c] = static_cast<index_t>(lower.size());
    ds.ucount[c] = static_cast<index_t>(upper.size()) + 1;
    for (index_t t : upper) urow[t]++;
    std::vector<index_t>& lc = lpat[c];
    lc.reserve(lower.size() - 1);
    for (index_t s : lower)
      if (s != c) lc.push_back(s);
    if (keep_upper_patterns) ds.upat[c] = upper;
  }
  for (index_t k = 0; k < n; ++k)
    ds.flops += static_cast<double>(ds.lcount[k] - 1) * static_cast<double>(urow[k]);
  ds.etree = etree_build(a, mode);
  return ds;
}

OffBlockSymbolic nd_lower_symbolic(const CscMatrix& a_ki, const DiagSymbolic& diag) {
  const index_t nc = a_ki.ncols;
  if (static_cast<index_t>(diag.upat.size()) != nc)
    throw Error(ErrorKind::bad_input,
                "lower-block symbolic needs the diagonal upper patterns retained");
  OffBlockSymbolic r;
  r.count.assign(nc, 0);
  r.range.col.assign(nc, RowRange{});
  std::vector<std::vector<index_t>> sets(nc);
  std::vector<index_t> mark(a_ki.nrows, -1);
  std::vector<index_t> cur;
  for (index_t c = 0; c < nc; ++c) {
    cur.clear();
    auto add = [&](index_t row) {
      if (mark[row] == c) return;
      mark[row] = c;
      cur.push_back(row);
    };
    for (index_t row : a_ki.col_rows(c)) add(row);
    for (index_t t : diag.upat[c])
      for (index_t row : sets[t]) add(row);
    r.count[c] = static_cast<index_t>(cur.size());
    RowRange& rr = r.range.col[c];
    for (index_t row : cur) {
      if (rr.empty()) {
        rr.lo = rr.hi = row;
      } else {
        rr.lo = std::min(rr.lo, row);
        rr.hi = std::max(rr.hi, row);
      }
    }
    sets[c] = cur;
  }
  return r;
}

OffBlockSymbolic nd_upper_symbolic(const CscMatrix& a_ik, const EliminationTree& etree) {
  const index_t nc = a_ik.ncols;
  if (a_ik.nrows > etree.size())
    throw Error(ErrorKind::bad_input, "upper-block rows exceed the elimination tree");
  OffBlockSymbolic r;
  r.count.assign(nc, 0);
  r.range.col.assign(nc, RowRange{});
  std::vector<index_t> mark(etree.size(), -1);
  for (index_t c = 0; c < nc; ++c) {
    index_t cnt = 0;
    RowRange& rr = r.range.col[c];
    for (index_t seed : a_ik.col_rows(c)) {
      for (index_t t = seed; t != -1 && mark[t] != c; t = etree.parent[t]) {
        mark[t] = c;
        ++cnt;
        if (rr.empty()) {
          rr.lo = rr.hi = t;
        } else {
          rr.lo = std::min(rr.lo, t);
          rr.hi = std::max(rr.hi, t);
        }
      }
    }
    r.count[c] = cnt;
  }
  return r;
}

RowRange product_interval(const RowRangeBound& lower_ranges, RowRange ucol) {
  RowRange out;
  if (ucol.empty()) return out;
  index_t lo = std::max<index_t>(ucol.lo, 0);
  index_t hi = std::min<index_t>(ucol.hi, static_cast<index_t>(lower_ranges.col.size()) - 1);
  for (index_t t = lo; t <= hi; ++t) {
    RowRange lr = lower_ranges.col[t];
    if (lr.empty()) continue;
    if (out.empty()) {
      out = lr;
    } else {
      out.lo = std::min(out.lo, lr.lo);
      out.hi = std::max(out.hi, lr.hi);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worker schedule.
// ---------------------------------------------------------------------------

DependencyTree build_dependency_tree(const NdTree& tree, index_t p) {
  if (p != tree.nleaves())
    throw Error(ErrorKind::bad_input,
                "worker role count " + std::to_string(p) +
                    " must equal the dissection leaf count " + std::to_string(tree.nleaves()));
  const index_t nn = tree.nnodes();
  DependencyTree dt;
  dt.nworkers = p;
  dt.nodes.resize(nn);
  for (index_t k = 0; k < p; ++k) {
    DepNode& leaf = dt.nodes[tree.leaves[k]];
    leaf.worker_lo = k;
    leaf.worker_hi = k + 1;
  }
  for (index_t x = 0; x < nn; ++x) {
    const NdNode& tn = tree.nodes[x];
    DepNode& nd = dt.nodes[x];
    nd.nd_node = x;
    nd.parent = tn.parent;
    if (tn.left != -1) {
      nd.treelevel = static_cast<int>(tn.height);
      nd.worker_lo = std::min(dt.nodes[tn.left].worker_lo, dt.nodes[tn.right].worker_lo);
      nd.worker_hi = std::max(dt.nodes[tn.left].worker_hi, dt.nodes[tn.right].worker_hi);
    } else {
      nd.treelevel = -1;
    }
    nd.owned.push_back({x, x});
    for (index_t a = tn.parent; a != -1; a = tree.nodes[a].parent) {
      nd.owned.push_back({a, x});  // lower block of x's columns
      nd.owned.push_back({x, a});  // upper block of x's rows
    }
  }
  index_t levels = tree.nodes[tree.root()].height;
  dt.slevels.assign(levels, {});
  for (index_t x = 0; x < nn; ++x)
    if (tree.nodes[x].left != -1) dt.slevels[tree.nodes[x].height - 1].push_back(x);
  return dt;
}

// ---------------------------------------------------------------------------
// Whole-matrix analysis.
// ---------------------------------------------------------------------------

index_t SymbolicPlan::total_factor_alloc() const {
  index_t s = 0;
  for (const FineBtfBlockPlan& b : btf_blocks) s += b.alloc_l + b.alloc_u;
  for (const NdDomainPlan& d : nd_domains)
    for (const NdNodePlan& np : d.nodes) {
      s += np.alloc_l + np.alloc_u;
      for (const NdBlockPlan& bp : np.lower) s += bp.alloc;
      for (const NdBlockPlan& bp : np.upper) s += bp.alloc;
    }
  return s;
}

SymbolicPlan symbolic_analyze(const CscMatrix& a, const SymbolicOptions& opt) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "symbolic analysis requires a square matrix");
  const index_t n = a.ncols;
  if (n <= 0) throw Error(ErrorKind::bad_input, "matrix must be nonempty");
  SymbolicOptions res = opt;
  if (res.threads < 1) res.threads = 1;
  if (!is_pow2(res.nd_leaves))
    throw Error(ErrorKind::bad_input, "nd_leaves must be a positive power of two");
  if (res.nd_threshold <= 0)
    res.nd_threshold = std::max<index_t>(1000, 2 * res.nd_leaves);
  if (!(res.alloc_headroom >= 1.0))
    throw Error(ErrorKind::bad_input, "alloc_headroom must be at least 1");

  SymbolicPlan plan;
  plan.n = n;
  plan.threads = res.threads;
  plan.options = res;
  plan.coarse = res.no_btf ? coarse_whole_nd(n, res.nd_threshold)
                           : coarse_decompose(a, res.nd_threshold);
  const CoarsePlan& cp = plan.coarse;

  Permutation pm_rows = cp.perm_mwcm.then(cp.perm_btf);
  CscMatrix apc = permute(a, pm_rows, cp.perm_btf);

  std::vector<index_t> lrow(n), lcol(n);
  for (index_t i = 0; i < n; ++i) lrow[i] = lcol[i] = i;

  for (index_t b = 0; b < cp.nblocks(); ++b) {
    const index_t lo = cp.block_offsets[b];
    const index_t m = cp.block_size(b);
    CscMatrix blk = extract_square(apc, lo, m);
    if (cp.block_kind[b] == BlockKind::FineBtf) {
      FineBtfBlockPlan bp;
      bp.block = b;
      bp.perm_amd = res.natural_order ? Permutation::identity(m) : amd_order(blk);
      CscMatrix blkp = permute(blk, bp.perm_amd, bp.perm_amd);
      DiagSymbolic ds = diag_symbolic(blkp, res.etree_mode, false);
      bp.lcount = std::move(ds.lcount);
      bp.ucount = std::move(ds.ucount);
      bp.flops = ds.flops;
      bp.alloc_l = alloc_budget(sum_counts(bp.lcount), res.alloc_headroom);
      bp.alloc_u = alloc_budget(sum_counts(bp.ucount), res.alloc_headroom);
      for (index_t i = 0; i < m; ++i) {
        lrow[lo + i] = lo + bp.perm_amd.forward[i];
        lcol[lo + i] = lo + bp.perm_amd.forward[i];
      }
      plan.btf_blocks.push_back(std::move(bp));
    } else {
      NdDomainPlan dp;
      dp.block = b;
      // The global matching already cleared this diagonal unless the coarse
      // stage was bypassed, in which case the block needs its own matching.
      dp.perm_m2 = res.no_btf ? mwcm(blk) : Permutation::identity(m);
      CscMatrix blk2 = res.no_btf ? permute(blk, dp.perm_m2, Permutation::identity(m))
                                  : std::move(blk);
      if (res.natural_order) {
        dp.perm_nd = Permutation::identity(m);
        dp.tree = single_node_tree(m);
      } else {
        NdResult nd = nd_order(blk2, clamp_leaves(res.nd_leaves, m));
        dp.perm_nd = std::move(nd.perm);
        dp.tree = std::move(nd.tree);
      }
      CscMatrix dom = permute(blk2, dp.perm_nd, dp.perm_nd);
      dp.nodes = NdPlanner(dom, dp.tree, res.etree_mode, res.alloc_headroom).run();
      dp.deps = build_dependency_tree(dp.tree, dp.tree.nleaves());
      for (index_t i = 0; i < m; ++i) {
        lrow[lo + i] = lo + dp.perm_nd.forward[dp.perm_m2.forward[i]];
        lcol[lo + i] = lo + dp.perm_nd.forward[i];
      }
      plan.nd_domains.push_back(std::move(dp));
    }
  }

  plan.row_perm = pm_rows.then(Permutation::from_forward(std::move(lrow)));
  plan.col_perm = cp.perm_btf.then(Permutation::from_forward(std::move(lcol)));

  // Longest-processing-time balance of the small blocks across thread
  // groups: largest flop estimate first, each into the lightest group.
  const index_t ng = res.threads;
  plan.btf_groups.assign(ng, {});
  std::vector<index_t> order(plan.btf_blocks.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<index_t>(i);
  std::sort(order.begin(), order.end(), [&](index_t x, index_t y) {
    if (plan.btf_blocks[x].flops != plan.btf_blocks[y].flops)
      return plan.btf_blocks[x].flops > plan.btf_blocks[y].flops;
    return x < y;
  });
  std::vector<double> load(ng, 0.0);
  for (index_t id : order) {
    index_t g = 0;
    for (index_t k = 1; k < ng; ++k)
      if (load[k] < load[g]) g = k;
    plan.btf_blocks[id].owner = g;
    plan.btf_groups[g].push_back(id);
    load[g] += plan.btf_blocks[id].flops;
  }
  for (std::vector<index_t>& g : plan.btf_groups) std::sort(g.begin(), g.end());
  g_symbolic_runs.fetch_add(1, std::memory_order_relaxed);
  return plan;
}

index_t symbolic_run_count() {
  return g_symbolic_runs.load(std::memory_order_relaxed);
}

// ---------------------------------------------------------------------------
// Serialization: a flat host-endian image with explicit lengths. The worker
// schedule and thread groups are deterministic functions of the rest, so
// they are rebuilt on load instead of being stored.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'B', 'L', 'U', 'P', 'L', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

struct ByteWriter {
  std::vector<std::uint8_t> buf;

  void raw(const void* p, size_t k) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + k);
  }
  void w_u8(std::uint8_t v) { buf.push_back(v); }
  void w_u32(std::uint32_t v) { raw(&v, sizeof v); }
  void w_i64(index_t v) { raw(&v, sizeof v); }
  void w_f64(double v) { raw(&v, sizeof v); }
  void w_ivec(const std::vector<index_t>& v) {
    w_i64(static_cast<index_t>(v.size()));
    raw(v.data(), v.size() * sizeof(index_t));
  }
  void w_perm(const Permutation& p) { w_ivec(p.forward); }
};

struct ByteReader {
  const std::uint8_t* p;
  size_t n;
  size_t pos = 0;

  void need(size_t k) {
    if (pos + k > n) throw Error(ErrorKind::bad_input, "plan image truncated");
  }
  void raw(void* out, size_t k) {
    need(k);
    std::memcpy(out, p + pos, k);
    pos += k;
  }
  std::uint8_t r_u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t r_u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  index_t r_i64() {
    index_t v;
    raw(&v, sizeof v);
    return v;
  }
  double r_f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  index_t r_len() {
    index_t k = r_i64();
    if (k < 0 || static_cast<size_t>(k) > (n - pos) / sizeof(index_t))
      throw Error(ErrorKind::bad_input, "plan image has an invalid length field");
    return k;
  }
  // Count of records that occupy at least min_bytes each.
  index_t r_count(size_t min_bytes) {
    index_t k = r_i64();
    if (k < 0 || static_cast<size_t>(k) > (n - pos) / min_bytes)
      throw Error(ErrorKind::bad_input, "plan image has an invalid record count");
    return k;
  }
  std::vector<index_t> r_ivec() {
    index_t k = r_len();
    std::vector<index_t> v(k);
    raw(v.data(), static_cast<size_t>(k) * sizeof(index_t));
    return v;
  }
  Permutation r_perm() { return Permutation::from_forward(r_ivec()); }
};

void write_range_bound(ByteWriter& w, const RowRangeBound& rb) {
  w.w_i64(static_cast<index_t>(rb.col.size()));
  for (const RowRange& r : rb.col) {
    w.w_i64(r.lo);
    w.w_i64(r.hi);
  }
}

RowRangeBound read_range_bound(ByteReader& r) {
  RowRangeBound rb;
  index_t k = r.r_len();
  rb.col.resize(k);
  for (index_t i = 0; i < k; ++i) {
    rb.col[i].lo = r.r_i64();
    rb.col[i].hi = r.r_i64();
  }
  return rb;
}

void write_block_plan(ByteWriter& w, const NdBlockPlan& bp) {
  w.w_ivec(bp.count);
  write_range_bound(w, bp.range);
  w.w_i64(bp.alloc);
}

NdBlockPlan read_block_plan(ByteReader& r) {
  NdBlockPlan bp;
  bp.count = r.r_ivec();
  bp.range = read_range_bound(r);
  bp.alloc = r.r_i64();
  if (bp.range.col.size() != bp.count.size())
    throw Error(ErrorKind::bad_input, "plan image block sizes disagree");
  return bp;
}

}  // namespace

std::vector<std::uint8_t> plan_serialize(const SymbolicPlan& plan) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.w_u32(kVersion);
  w.w_i64(plan.n);
  w.w_i64(plan.threads);
  const SymbolicOptions& o = plan.options;
  w.w_i64(o.threads);
  w.w_i64(o.nd_leaves);
  w.w_i64(o.nd_threshold);
  w.w_u8(o.no_btf ? 1 : 0);
  w.w_u8(o.natural_order ? 1 : 0);
  w.w_u8(static_cast<std::uint8_t>(o.etree_mode));
  w.w_f64(o.alloc_headroom);
  w.w_perm(plan.coarse.perm_mwcm);
  w.w_perm(plan.coarse.perm_btf);
  w.w_ivec(plan.coarse.block_offsets);
  w.w_i64(plan.coarse.nblocks());
  for (BlockKind k : plan.coarse.block_kind) w.w_u8(static_cast<std::uint8_t>(k));
  w.w_i64(plan.coarse.nd_threshold);
  w.w_perm(plan.row_perm);
  w.w_perm(plan.col_perm);
  w.w_i64(static_cast<index_t>(plan.btf_blocks.size()));
  for (const FineBtfBlockPlan& b : plan.btf_blocks) {
    w.w_i64(b.block);
    w.w_perm(b.perm_amd);
    w.w_ivec(b.lcount);
    w.w_ivec(b.ucount);
    w.w_f64(b.flops);
    w.w_i64(b.alloc_l);
    w.w_i64(b.alloc_u);
    w.w_i64(b.owner);
  }
  w.w_i64(static_cast<index_t>(plan.nd_domains.size()));
  for (const NdDomainPlan& d : plan.nd_domains) {
    w.w_i64(d.block);
    w.w_perm(d.perm_m2);
    w.w_perm(d.perm_nd);
    w.w_i64(d.tree.nnodes());
    for (const NdNode& nd : d.tree.nodes) {
      w.w_i64(nd.first_col);
      w.w_i64(nd.ncols);
      w.w_i64(nd.parent);
      w.w_i64(nd.left);
      w.w_i64(nd.right);
      w.w_i64(nd.height);
    }
    w.w_ivec(d.tree.leaves);
    for (const NdNodePlan& np : d.nodes) {
      w.w_ivec(np.diag_lcount);
      w.w_ivec(np.diag_ucount);
      w.w_ivec(np.etree.parent);
      w.w_i64(np.alloc_l);
      w.w_i64(np.alloc_u);
      w.w_i64(static_cast<index_t>(np.lower.size()));
      for (const NdBlockPlan& bp : np.lower) write_block_plan(w, bp);
      w.w_i64(static_cast<index_t>(np.upper.size()));
      for (const NdBlockPlan& bp : np.upper) write_block_plan(w, bp);
    }
  }
  return std::move(w.buf);
}

SymbolicPlan plan_deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes.data(), bytes.size()};
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorKind::bad_input, "not a factorization plan image");
  if (r.r_u32() != kVersion)
    throw Error(ErrorKind::bad_input, "unsupported plan image version");
  SymbolicPlan plan;
  plan.n = r.r_i64();
  plan.threads = r.r_i64();
  SymbolicOptions& o = plan.options;
  o.threads = r.r_i64();
  o.nd_leaves = r.r_i64();
  o.nd_threshold = r.r_i64();
  o.no_btf = r.r_u8() != 0;
  o.natural_order = r.r_u8() != 0;
  std::uint8_t em = r.r_u8();
  if (em > 1) throw Error(ErrorKind::bad_input, "plan image has an unknown tree mode");
  o.etree_mode = static_cast<EtreeMode>(em);
  o.alloc_headroom = r.r_f64();
  plan.coarse.perm_mwcm = r.r_perm();
  plan.coarse.perm_btf = r.r_perm();
  plan.coarse.block_offsets = r.r_ivec();
  index_t nb = r.r_count(1);
  if (nb + 1 != static_cast<index_t>(plan.coarse.block_offsets.size()))
    throw Error(ErrorKind::bad_input, "plan image block table is inconsistent");
  plan.coarse.block_kind.resize(nb);
  for (index_t i = 0; i < nb; ++i) {
    std::uint8_t k = r.r_u8();
    if (k > 1) throw Error(ErrorKind::bad_input, "plan image has an unknown block kind");
    plan.coarse.block_kind[i] = static_cast<BlockKind>(k);
  }
  plan.coarse.nd_threshold = r.r_i64();
  plan.row_perm = r.r_perm();
  plan.col_perm = r.r_perm();
  index_t nbtf = r.r_len();
  plan.btf_blocks.resize(nbtf);
  for (index_t i = 0; i < nbtf; ++i) {
    FineBtfBlockPlan& b = plan.btf_blocks[i];
    b.block = r.r_i64();
    b.perm_amd = r.r_perm();
    b.lcount = r.r_ivec();
    b.ucount = r.r_ivec();
    b.flops = r.r_f64();
    b.alloc_l = r.r_i64();
    b.alloc_u = r.r_i64();
    b.owner = r.r_i64();
    if (b.owner < 0 || b.owner >= plan.threads)
      throw Error(ErrorKind::bad_input, "plan image has an invalid block owner");
  }
  index_t nnd = r.r_len();
  plan.nd_domains.resize(nnd);
  for (index_t i = 0; i < nnd; ++i) {
    NdDomainPlan& d = plan.nd_domains[i];
    d.block = r.r_i64();
    d.perm_m2 = r.r_perm();
    d.perm_nd = r.r_perm();
    index_t nn = r.r_len();
    if (nn < 1) throw Error(ErrorKind::bad_input, "plan image has an empty tree");
    d.tree.nodes.resize(nn);
    for (index_t x = 0; x < nn; ++x) {
      NdNode& nd = d.tree.nodes[x];
      nd.first_col = r.r_i64();
      nd.ncols = r.r_i64();
      nd.parent = r.r_i64();
      nd.left = r.r_i64();
      nd.right = r.r_i64();
      nd.height = r.r_i64();
      bool ok = nd.ncols >= 0 && nd.first_col >= 0 && nd.parent >= -1 && nd.parent < nn &&
                nd.left >= -1 && nd.left < nn && nd.right >= -1 && nd.right < nn &&
                nd.height >= 0;
      if (!ok) throw Error(ErrorKind::bad_input, "plan image has an invalid tree node");
    }
    d.tree.leaves = r.r_ivec();
    for (index_t l : d.tree.leaves)
      if (l < 0 || l >= nn)
        throw Error(ErrorKind::bad_input, "plan image has an invalid tree leaf");
    d.nodes.resize(nn);
    for (index_t x = 0; x < nn; ++x) {
      NdNodePlan& np = d.nodes[x];
      np.diag_lcount = r.r_ivec();
      np.diag_ucount = r.r_ivec();
      np.etree.parent = r.r_ivec();
      np.alloc_l = r.r_i64();
      np.alloc_u = r.r_i64();
      index_t nl = r.r_len();
      np.lower.resize(nl);
      for (index_t k = 0; k < nl; ++k) np.lower[k] = read_block_plan(r);
      index_t nu = r.r_len();
      np.upper.resize(nu);
      for (index_t k = 0; k < nu; ++k) np.upper[k] = read_block_plan(r);
    }
    d.deps = build_dependency_tree(d.tree, d.tree.nleaves());
  }
  if (r.pos != r.n) throw Error(ErrorKind::bad_input, "plan image has trailing bytes");
  // Thread groups are a deterministic function of owners.
  plan.btf_groups.assign(plan.threads, {});
  for (index_t i = 0; i < nbtf; ++i)
    plan.btf_groups[plan.btf_blocks[i].owner].push_back(i);
  return plan;
}

}  // namespace hblu
