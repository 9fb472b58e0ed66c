#include "hblu/numeric.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <thread>

namespace hblu {

namespace {

index_t pow2_floor(index_t v) {
  if (v < 1) return 1;
  return static_cast<index_t>(
      std::bit_floor(static_cast<std::uint64_t>(v)));
}

index_t window_count(index_t cols) {
  return (cols + kSyncWindow - 1) / kSyncWindow;
}

// Readiness flag, padded to its own cache line. The stored value is the
// factorization generation that has published this window; it only grows.
struct Cell {
  alignas(64) std::atomic<index_t> v{0};
};

// Counter barrier with a generation word so it is reusable. All worker
// threads arrive at every barrier, whether or not they had work in the
// preceding stage, which keeps the rendezvous structure identical on every
// thread and trivially deadlock-free.
class SpinBarrier {
 public:
  explicit SpinBarrier(index_t n) : n_(n) {}

  void arrive_and_wait() {
    const index_t phase = phase_.load(std::memory_order_acquire);
    if (arrived_.fetch_add(1, std::memory_order_acq_rel) + 1 == n_) {
      arrived_.store(0, std::memory_order_relaxed);
      phase_.store(phase + 1, std::memory_order_release);
    } else {
      index_t spins = 0;
      while (phase_.load(std::memory_order_acquire) == phase)
        if (++spins > 8) std::this_thread::yield();
    }
  }

 private:
  std::atomic<index_t> arrived_{0};
  std::atomic<index_t> phase_{0};
  index_t n_;
};

void abort_with_column(std::atomic<index_t>& abort_col, index_t col) {
  index_t cur = abort_col.load(std::memory_order_relaxed);
  while (cur < 0 || col < cur)
    if (abort_col.compare_exchange_weak(cur, col, std::memory_order_relaxed))
      break;
}

bool aborted(const std::atomic<index_t>& abort_col) {
  return abort_col.load(std::memory_order_relaxed) >= 0;
}

// Waits until the cell has been published for this generation. Returns false
// when the factorization aborted instead.
bool await_cell(const Cell& c, index_t gen,
                const std::atomic<index_t>& abort_col) {
  index_t spins = 0;
  while (c.v.load(std::memory_order_acquire) < gen) {
    if (aborted(abort_col)) return false;
    if (++spins > 8) std::this_thread::yield();
  }
  return true;
}

// Mirror of permute() that also records where each output entry came from,
// so a same-pattern value refresh is a flat gather.
CscMatrix permute_with_src(const CscMatrix& a, const Permutation& rowp,
                           const Permutation& colp,
                           std::vector<index_t>& src) {
  CscMatrix b(a.nrows, a.ncols);
  b.col_ptr.assign(a.ncols + 1, 0);
  for (index_t j = 0; j < a.ncols; ++j)
    b.col_ptr[colp.forward[j] + 1] = a.col_ptr[j + 1] - a.col_ptr[j];
  for (index_t j = 0; j < a.ncols; ++j) b.col_ptr[j + 1] += b.col_ptr[j];
  b.row_idx.resize(a.nnz());
  b.values.resize(a.nnz());
  src.assign(a.nnz(), 0);
  std::vector<std::pair<index_t, index_t>> col_entries;  // (new row, src pos)
  for (index_t j = 0; j < a.ncols; ++j) {
    const index_t jj = colp.forward[j];
    col_entries.clear();
    for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p)
      col_entries.emplace_back(rowp.forward[a.row_idx[p]], p);
    std::sort(col_entries.begin(), col_entries.end());
    index_t q = b.col_ptr[jj];
    for (const auto& [r, p] : col_entries) {
      b.row_idx[q] = r;
      b.values[q] = a.values[p];
      src[q] = p;
      ++q;
    }
  }
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reusable workspace.
// ---------------------------------------------------------------------------

namespace {

// Numeric state of one dissection-tree node: the diagonal factorization in
// progress plus one lower / upper column store per ancestor (nearest first),
// with their readiness cells and cached input blocks.
struct NodeWork {
  DiagGpState diag;
  std::vector<ColumnStore> lower;
  std::vector<ColumnStore> upper;
  std::vector<GpStats> lower_stats;
  std::vector<GpStats> upper_stats;
  std::unique_ptr<Cell[]> diag_cells;
  std::vector<std::unique_ptr<Cell[]>> upper_cells;
  const BlockedMatrix::Block* a_diag = nullptr;
  std::vector<const BlockedMatrix::Block*> a_lower;
  std::vector<const BlockedMatrix::Block*> a_upper;
};

struct DomainWork {
  index_t dom_lo = 0;      // global column offset of the domain
  index_t fine_base = 0;   // first fine block id of the domain
  std::vector<NodeWork> nodes;
  std::vector<index_t> depth;                  // root = 0
  std::vector<std::vector<index_t>> anc;       // per node, nearest first
  std::vector<index_t> role_leaf;              // role -> leaf node id
  std::vector<std::vector<index_t>> role_led;  // role -> height -> node|-1
};

struct BtfWork {
  bool scalar = false;
  double scalar_val = 0.0;
  bool singular = false;
  DiagGpState gp;
  const BlockedMatrix::Block* a_diag = nullptr;
  index_t lo = 0;  // global column offset
  index_t m = 0;
};

}  // namespace

struct NumericWork {
  // Pattern of the matrix the plan was first applied to, for refresh checks.
  index_t nrows = 0;
  index_t ncols = 0;
  std::vector<index_t> orig_col_ptr;
  std::vector<index_t> orig_row_idx;
  std::vector<index_t> apc_src;  // permuted entry -> original entry

  BlockedMatrix bm;  // fine 2D blocking of the permuted matrix
  std::vector<BtfWork> btf;
  std::vector<DomainWork> domains;
  index_t spa_extent = 1;  // max block-local row extent any kernel touches
  index_t generation = 0;
};

NumericFactor::NumericFactor() = default;
NumericFactor::~NumericFactor() = default;
NumericFactor::NumericFactor(NumericFactor&&) noexcept = default;
NumericFactor& NumericFactor::operator=(NumericFactor&&) noexcept = default;

// ---------------------------------------------------------------------------
// Reduction primitive.
// ---------------------------------------------------------------------------

void reduce_contribution(SparseAccumulator& spa,
                         std::span<ContributionTerm> terms, GpStats& st) {
  std::stable_sort(terms.begin(), terms.end(),
                   [](const ContributionTerm& a, const ContributionTerm& b) {
                     return a.block_key < b.block_key;
                   });
  for (const ContributionTerm& t : terms)
    axpy_columns(*t.lcols, t.urows, t.uvals, t.ulen, spa, st, -1.0);
}

// ---------------------------------------------------------------------------
// Setup.
// ---------------------------------------------------------------------------

namespace {

void build_work(const SymbolicPlan& plan, const CscMatrix& a,
                NumericFactor& f) {
  f.work = std::make_unique<NumericWork>();
  NumericWork& w = *f.work;
  w.nrows = a.nrows;
  w.ncols = a.ncols;
  w.orig_col_ptr = a.col_ptr;
  w.orig_row_idx = a.row_idx;
  f.apc = permute_with_src(a, plan.row_perm, plan.col_perm, w.apc_src);

  // Fine block boundaries: one block per small diagonal block, one per
  // dissection-tree node of each large block.
  std::vector<index_t> offsets{0};
  std::vector<index_t> fine_base(plan.coarse.nblocks(), 0);
  std::size_t btf_i = 0, dom_i = 0;
  std::vector<index_t> btf_fine(plan.btf_blocks.size(), 0);
  std::vector<index_t> dom_fine(plan.nd_domains.size(), 0);
  for (index_t b = 0; b < plan.coarse.nblocks(); ++b) {
    fine_base[b] = static_cast<index_t>(offsets.size()) - 1;
    const index_t lo = plan.coarse.block_offsets[b];
    if (plan.coarse.block_kind[b] == BlockKind::FineBtf) {
      btf_fine[btf_i++] = fine_base[b];
      offsets.push_back(plan.coarse.block_offsets[b + 1]);
    } else {
      const NdDomainPlan& dp = plan.nd_domains[dom_i];
      dom_fine[dom_i++] = fine_base[b];
      for (const NdNode& nd : dp.tree.nodes)
        offsets.push_back(lo + nd.first_col + nd.ncols);
    }
  }
  w.bm = extract_blocks(f.apc, offsets, offsets);

  // Small blocks.
  w.btf.resize(plan.btf_blocks.size());
  for (std::size_t i = 0; i < plan.btf_blocks.size(); ++i) {
    const FineBtfBlockPlan& bp = plan.btf_blocks[i];
    BtfWork& bw = w.btf[i];
    bw.lo = plan.coarse.block_offsets[bp.block];
    bw.m = plan.coarse.block_size(bp.block);
    bw.a_diag = w.bm.find(btf_fine[i], btf_fine[i]);
    if (bw.m == 1) {
      bw.scalar = true;
    } else {
      bw.gp.init(bw.m, bp.alloc_l, bp.alloc_u);
      w.spa_extent = std::max(w.spa_extent, bw.m);
    }
  }

  // Cooperative domains.
  w.domains.resize(plan.nd_domains.size());
  for (std::size_t d = 0; d < plan.nd_domains.size(); ++d) {
    const NdDomainPlan& dp = plan.nd_domains[d];
    DomainWork& dw = w.domains[d];
    dw.dom_lo = plan.coarse.block_offsets[dp.block];
    dw.fine_base = dom_fine[d];
    const index_t nn = dp.tree.nnodes();
    dw.depth.assign(nn, 0);
    for (index_t x = nn - 1; x >= 0; --x) {
      const index_t par = dp.tree.nodes[x].parent;
      if (par >= 0) dw.depth[x] = dw.depth[par] + 1;
    }
    dw.anc.resize(nn);
    for (index_t x = 0; x < nn; ++x)
      for (index_t p = dp.tree.nodes[x].parent; p >= 0;
           p = dp.tree.nodes[p].parent)
        dw.anc[x].push_back(p);

    const index_t R = dp.deps.nworkers;
    const index_t levels = static_cast<index_t>(dp.deps.slevels.size());
    dw.role_leaf.assign(R, -1);
    dw.role_led.assign(R, std::vector<index_t>(levels + 1, -1));
    for (const DepNode& dn : dp.deps.nodes) {
      if (dn.treelevel < 0)
        dw.role_leaf[dn.worker_lo] = dn.nd_node;
      else
        dw.role_led[dn.worker_lo][dn.treelevel] = dn.nd_node;
    }

    dw.nodes.resize(nn);
    for (index_t x = 0; x < nn; ++x) {
      const NdNodePlan& np = dp.nodes[x];
      NodeWork& nx = dw.nodes[x];
      const index_t m = dp.tree.nodes[x].ncols;
      w.spa_extent = std::max(w.spa_extent, m);
      nx.diag.init(m, np.alloc_l, np.alloc_u);
      nx.diag_cells = std::make_unique<Cell[]>(window_count(m));
      const index_t nanc = static_cast<index_t>(dw.anc[x].size());
      nx.lower.resize(nanc);
      nx.upper.resize(nanc);
      nx.lower_stats.resize(nanc);
      nx.upper_stats.resize(nanc);
      nx.upper_cells.resize(nanc);
      nx.a_lower.resize(nanc);
      nx.a_upper.resize(nanc);
      nx.a_diag = w.bm.find(dw.fine_base + x, dw.fine_base + x);
      for (index_t k = 0; k < nanc; ++k) {
        const index_t anc = dw.anc[x][k];
        const index_t acols = dp.tree.nodes[anc].ncols;
        nx.lower[k].init(acols, m, np.lower[k].alloc);
        nx.upper[k].init(m, acols, np.upper[k].alloc);
        nx.upper_cells[k] = std::make_unique<Cell[]>(window_count(acols));
        nx.a_lower[k] = w.bm.find(dw.fine_base + anc, dw.fine_base + x);
        nx.a_upper[k] = w.bm.find(dw.fine_base + x, dw.fine_base + anc);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Column kernels shared by the stages.
// ---------------------------------------------------------------------------

// Scatters one input-block column into the accumulator, adding values and
// discovering rows. Null block pointers stand for structurally empty blocks.
void scatter_seed(const BlockedMatrix::Block* ab, index_t c,
                  SparseAccumulator& spa) {
  if (!ab) return;
  const auto rows = ab->m.col_rows(c);
  const auto vals = ab->m.col_values(c);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    spa.touch(rows[k]);
    spa.val[rows[k]] += vals[k];
  }
}

// Marks the input-block column's pattern through the partial factor's graph
// (values are zeroed; actual values are added afterwards).
void reach_seed(const DiagGpState& gp, const BlockedMatrix::Block* ab,
                index_t c, SparseAccumulator& spa, GpStats& st) {
  if (!ab) return;
  const auto rows = ab->m.col_rows(c);
  reach(gp.l, gp.pinv.data(), rows.data(), static_cast<index_t>(rows.size()),
        spa, st);
}

void add_seed_values(const BlockedMatrix::Block* ab, index_t c,
                     SparseAccumulator& spa) {
  if (!ab) return;
  const auto rows = ab->m.col_rows(c);
  const auto vals = ab->m.col_values(c);
  for (std::size_t k = 0; k < rows.size(); ++k) spa.val[rows[k]] += vals[k];
}

// Per-worker scratch buffers.
struct WorkerScratch {
  SparseAccumulator spa;
  std::vector<index_t> rowbuf;
  std::vector<double> valbuf;
  std::vector<ContributionTerm> terms;
};

// Emits the accumulator's pattern/values as column c of a store, with rows
// relabeled to the producing node's pivotal order.
void push_pivotal_column(ColumnStore& store, index_t c, const index_t* pinv,
                         WorkerScratch& ws) {
  ws.rowbuf.clear();
  ws.valbuf.clear();
  for (index_t r : ws.spa.pattern) {
    ws.rowbuf.push_back(pinv[r]);
    ws.valbuf.push_back(ws.spa.val[r]);
  }
  store.push_column(c, ws.rowbuf.data(), ws.valbuf.data(),
                    static_cast<index_t>(ws.rowbuf.size()));
}

// Emits the accumulator as column c of a lower off-diagonal block after
// scaling by the pivot: rows stay in the ancestor's original local order.
void push_scaled_column(ColumnStore& store, index_t c, double pivot,
                        WorkerScratch& ws, GpStats& st) {
  ws.rowbuf.clear();
  ws.valbuf.clear();
  for (index_t r : ws.spa.pattern) {
    ws.rowbuf.push_back(r);
    ws.valbuf.push_back(ws.spa.val[r] / pivot);
  }
  st.flops += static_cast<double>(ws.rowbuf.size());
  store.push_column(c, ws.rowbuf.data(), ws.valbuf.data(),
                    static_cast<index_t>(ws.rowbuf.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// The cooperative executor.
// ---------------------------------------------------------------------------

namespace {

struct RunCtx {
  const SymbolicPlan* plan = nullptr;
  NumericWork* w = nullptr;
  double tol = 0.001;
  index_t nthreads = 1;
  index_t gen = 1;
  SpinBarrier* barrier = nullptr;
  std::atomic<index_t> abort_col{-1};
};

index_t subtree_first(const NdTree& tree, index_t x) {
  return x - ((index_t{2} << tree.nodes[x].height) - 1) + 1;
}

// Leaf phase: factor the leaf diagonal block, then its lower off-diagonal
// blocks (no readiness flags needed; a barrier follows the phase).
void leaf_phase(RunCtx& ctx, DomainWork& dw, const NdDomainPlan& dp,
                index_t role, WorkerScratch& ws) {
  const index_t x = dw.role_leaf[role];
  NodeWork& nx = dw.nodes[x];
  const index_t m = dp.tree.nodes[x].ncols;
  for (index_t c = 0; c < m; ++c) {
    if (aborted(ctx.abort_col)) return;
    ws.spa.new_column();
    reach_seed(nx.diag, nx.a_diag, c, ws.spa, nx.diag.stats);
    add_seed_values(nx.a_diag, c, ws.spa);
    try {
      nx.diag.step(c, ctx.tol, ws.spa);
    } catch (const SingularError&) {
      abort_with_column(ctx.abort_col,
                        dw.dom_lo + dp.tree.nodes[x].first_col + c);
      return;
    }
  }
  const index_t nanc = static_cast<index_t>(dw.anc[x].size());
  for (index_t k = 0; k < nanc; ++k) {
    if (aborted(ctx.abort_col)) return;
    ColumnStore& store = nx.lower[k];
    GpStats& st = nx.lower_stats[k];
    for (index_t c = 0; c < m; ++c) {
      ws.spa.new_column();
      scatter_seed(nx.a_lower[k], c, ws.spa);
      const index_t ulen = nx.diag.u.len[c];
      axpy_columns(store, nx.diag.u.rows[c], nx.diag.u.vals[c], ulen - 1,
                   ws.spa, st, -1.0);
      const double pv = nx.diag.u.vals[c][ulen - 1];
      push_scaled_column(store, c, pv, ws, st);
    }
  }
}

// Upper off-diagonal block of a factored node `x` against separator `j`:
// reduce descendant contributions (none when x is a leaf), then solve
// through x's unit lower factor. Publishes a window flag as each window of
// j's columns completes.
void factor_upper_block(RunCtx& ctx, DomainWork& dw, const NdDomainPlan& dp,
                        index_t x, index_t j, index_t anc_idx,
                        WorkerScratch& ws) {
  NodeWork& nx = dw.nodes[x];
  ColumnStore& store = nx.upper[anc_idx];
  Cell* cells = nx.upper_cells[anc_idx].get();
  const BlockedMatrix::Block* ab = nx.a_upper[anc_idx];
  GpStats& st = nx.upper_stats[anc_idx];
  const index_t mj = dp.tree.nodes[j].ncols;
  const index_t desc_lo = subtree_first(dp.tree, x);
  for (index_t w = 0; w < window_count(mj); ++w) {
    const index_t c_lo = w * kSyncWindow;
    const index_t c_hi = std::min(mj, c_lo + kSyncWindow);
    for (index_t e = desc_lo; e < x; ++e) {
      const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
      if (!await_cell(dw.nodes[e].upper_cells[pos_ej][w], ctx.gen,
                      ctx.abort_col))
        return;
    }
    for (index_t c = c_lo; c < c_hi; ++c) {
      if (aborted(ctx.abort_col)) return;
      ws.spa.new_column();
      reach_seed(nx.diag, ab, c, ws.spa, st);
      ws.terms.clear();
      for (index_t e = desc_lo; e < x; ++e) {
        NodeWork& ne = dw.nodes[e];
        const index_t pos_ex = dw.depth[e] - dw.depth[x] - 1;
        const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
        const ColumnStore& ls = ne.lower[pos_ex];
        const ColumnStore& us = ne.upper[pos_ej];
        const index_t* urows = us.rows[c];
        const index_t ulen = us.len[c];
        for (index_t q = 0; q < ulen; ++q)
          reach(nx.diag.l, nx.diag.pinv.data(), ls.rows[urows[q]],
                ls.len[urows[q]], ws.spa, st);
        ws.terms.push_back({e, &ls, urows, us.vals[c], ulen});
      }
      add_seed_values(ab, c, ws.spa);
      reduce_contribution(ws.spa, ws.terms, st);
      column_solve(nx.diag.l, nx.diag.pinv.data(), ws.spa, st);
      push_pivotal_column(store, c, nx.diag.pinv.data(), ws);
      st.columns++;
    }
    cells[w].v.store(ctx.gen, std::memory_order_release);
  }
}

// Separator diagonal: reduce descendant contributions into each column and
// run the pivoting factorization step. Publishes per column window.
void factor_separator_diag(RunCtx& ctx, DomainWork& dw,
                           const NdDomainPlan& dp, index_t j,
                           WorkerScratch& ws) {
  NodeWork& nj = dw.nodes[j];
  const index_t mj = dp.tree.nodes[j].ncols;
  const index_t desc_lo = subtree_first(dp.tree, j);
  for (index_t w = 0; w < window_count(mj); ++w) {
    const index_t c_lo = w * kSyncWindow;
    const index_t c_hi = std::min(mj, c_lo + kSyncWindow);
    for (index_t e = desc_lo; e < j; ++e) {
      const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
      if (!await_cell(dw.nodes[e].upper_cells[pos_ej][w], ctx.gen,
                      ctx.abort_col))
        return;
    }
    for (index_t c = c_lo; c < c_hi; ++c) {
      if (aborted(ctx.abort_col)) return;
      ws.spa.new_column();
      reach_seed(nj.diag, nj.a_diag, c, ws.spa, nj.diag.stats);
      ws.terms.clear();
      for (index_t e = desc_lo; e < j; ++e) {
        NodeWork& ne = dw.nodes[e];
        const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
        const ColumnStore& ls = ne.lower[pos_ej];
        const ColumnStore& us = ne.upper[pos_ej];
        const index_t* urows = us.rows[c];
        const index_t ulen = us.len[c];
        for (index_t q = 0; q < ulen; ++q)
          reach(nj.diag.l, nj.diag.pinv.data(), ls.rows[urows[q]],
                ls.len[urows[q]], ws.spa, nj.diag.stats);
        ws.terms.push_back({e, &ls, urows, us.vals[c], ulen});
      }
      add_seed_values(nj.a_diag, c, ws.spa);
      reduce_contribution(ws.spa, ws.terms, nj.diag.stats);
      try {
        nj.diag.step(c, ctx.tol, ws.spa);
      } catch (const SingularError&) {
        abort_with_column(ctx.abort_col,
                          dw.dom_lo + dp.tree.nodes[j].first_col + c);
        return;
      }
    }
    nj.diag_cells[w].v.store(ctx.gen, std::memory_order_release);
  }
}

// Lower off-diagonal block (rows of ancestor a, columns of separator j):
// reduce descendant contributions, apply the within-block updates through
// the just-factored U column, scale by the pivot.
void factor_lower_block(RunCtx& ctx, DomainWork& dw, const NdDomainPlan& dp,
                        index_t j, index_t anc_idx, WorkerScratch& ws) {
  NodeWork& nj = dw.nodes[j];
  const index_t a = dw.anc[j][anc_idx];
  ColumnStore& store = nj.lower[anc_idx];
  GpStats& st = nj.lower_stats[anc_idx];
  const BlockedMatrix::Block* ab = nj.a_lower[anc_idx];
  const index_t mj = dp.tree.nodes[j].ncols;
  const index_t desc_lo = subtree_first(dp.tree, j);
  for (index_t w = 0; w < window_count(mj); ++w) {
    if (!await_cell(nj.diag_cells[w], ctx.gen, ctx.abort_col)) return;
    for (index_t e = desc_lo; e < j; ++e) {
      const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
      if (!await_cell(dw.nodes[e].upper_cells[pos_ej][w], ctx.gen,
                      ctx.abort_col))
        return;
    }
    const index_t c_lo = w * kSyncWindow;
    const index_t c_hi = std::min(mj, c_lo + kSyncWindow);
    for (index_t c = c_lo; c < c_hi; ++c) {
      if (aborted(ctx.abort_col)) return;
      ws.spa.new_column();
      scatter_seed(ab, c, ws.spa);
      ws.terms.clear();
      for (index_t e = desc_lo; e < j; ++e) {
        NodeWork& ne = dw.nodes[e];
        const index_t pos_ea = dw.depth[e] - dw.depth[a] - 1;
        const index_t pos_ej = dw.depth[e] - dw.depth[j] - 1;
        const ColumnStore& us = ne.upper[pos_ej];
        ws.terms.push_back(
            {e, &ne.lower[pos_ea], us.rows[c], us.vals[c], us.len[c]});
      }
      reduce_contribution(ws.spa, ws.terms, st);
      const index_t ulen = nj.diag.u.len[c];
      axpy_columns(store, nj.diag.u.rows[c], nj.diag.u.vals[c], ulen - 1,
                   ws.spa, st, -1.0);
      const double pv = nj.diag.u.vals[c][ulen - 1];
      push_scaled_column(store, c, pv, ws, st);
      st.columns++;
    }
  }
}

void factor_btf_block(RunCtx& ctx, BtfWork& bw, WorkerScratch& ws) {
  bw.singular = false;
  if (bw.scalar) {
    double v = 0.0;
    if (bw.a_diag && bw.a_diag->m.nnz() > 0) v = bw.a_diag->m.values[0];
    bw.scalar_val = v;
    bw.singular = (v == 0.0);
    return;
  }
  DiagGpState& gp = bw.gp;
  for (index_t c = 0; c < bw.m; ++c) {
    ws.spa.new_column();
    reach_seed(gp, bw.a_diag, c, ws.spa, gp.stats);
    add_seed_values(bw.a_diag, c, ws.spa);
    try {
      gp.step(c, ctx.tol, ws.spa);
    } catch (const SingularError&) {
      bw.singular = true;
      return;
    }
  }
}

void worker_body(RunCtx& ctx, index_t tau) {
  WorkerScratch ws;
  ws.spa.init(ctx.w->spa_extent);

  // Independent small blocks, round-robin over the plan's balance groups.
  const auto& groups = ctx.plan->btf_groups;
  std::vector<index_t> order;  // block indices this thread owns
  for (std::size_t g = tau; g < groups.size();
       g += static_cast<std::size_t>(ctx.nthreads))
    for (index_t bi : groups[g]) order.push_back(bi);
  for (index_t bi : order) factor_btf_block(ctx, ctx.w->btf[bi], ws);
  ctx.barrier->arrive_and_wait();

  // Cooperative domains, one after another.
  for (std::size_t d = 0; d < ctx.w->domains.size(); ++d) {
    DomainWork& dw = ctx.w->domains[d];
    const NdDomainPlan& dp = ctx.plan->nd_domains[d];
    const index_t R = dp.deps.nworkers;
    const index_t tnd = std::min(pow2_floor(ctx.nthreads), R);
    const index_t rper = R / tnd;
    const index_t rlo = tau < tnd ? tau * rper : 0;
    const index_t rhi = tau < tnd ? (tau + 1) * rper : 0;

    if (!aborted(ctx.abort_col))
      for (index_t r = rlo; r < rhi; ++r) leaf_phase(ctx, dw, dp, r, ws);
    ctx.barrier->arrive_and_wait();

    const index_t levels = static_cast<index_t>(dp.deps.slevels.size());
    for (index_t s = 1; s <= levels; ++s) {
      if (!aborted(ctx.abort_col)) {
        // Leaf-row upper blocks of this level's separator columns.
        for (index_t r = rlo; r < rhi; ++r) {
          const index_t x = dw.role_leaf[r];
          const index_t j = dw.anc[x][s - 1];
          factor_upper_block(ctx, dw, dp, x, j, s - 1, ws);
        }
        // Interior-row upper blocks, walking up one height at a time.
        for (index_t t = 1; t < s; ++t)
          for (index_t r = rlo; r < rhi; ++r) {
            const index_t l = dw.role_led[r][t];
            if (l < 0) continue;
            const index_t pos_lj = s - t - 1;
            const index_t j = dw.anc[l][pos_lj];
            factor_upper_block(ctx, dw, dp, l, j, pos_lj, ws);
          }
        // Separator diagonals: one designated worker each.
        for (index_t r = rlo; r < rhi; ++r) {
          const index_t j = dw.role_led[r][s];
          if (j >= 0) factor_separator_diag(ctx, dw, dp, j, ws);
        }
        // Remaining lower blocks, round-robin within the separator's team.
        for (index_t r = rlo; r < rhi; ++r) {
          const index_t x = dw.role_leaf[r];
          const index_t j = dw.anc[x][s - 1];
          const DepNode& dj = dp.deps.nodes[j];
          const index_t team = dj.worker_hi - dj.worker_lo;
          const index_t nanc = static_cast<index_t>(dw.anc[j].size());
          for (index_t k = 0; k < nanc; ++k)
            if (dj.worker_lo + (k % team) == r)
              factor_lower_block(ctx, dw, dp, j, k, ws);
        }
      }
      ctx.barrier->arrive_and_wait();
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Drive + finalize.
// ---------------------------------------------------------------------------

namespace {

void reset_work(NumericWork& w) {
  for (BtfWork& bw : w.btf) {
    bw.singular = false;
    if (!bw.scalar) bw.gp.reset();
  }
  for (DomainWork& dw : w.domains)
    for (NodeWork& nx : dw.nodes) {
      nx.diag.reset();
      for (auto& s : nx.lower) s.reset();
      for (auto& s : nx.upper) s.reset();
      for (auto& s : nx.lower_stats) s = GpStats{};
      for (auto& s : nx.upper_stats) s = GpStats{};
    }
}

void run_numeric(const SymbolicPlan& plan, NumericFactor& f,
                 const NumericOptions& opt) {
  NumericWork& w = *f.work;
  if (w.generation > 0) reset_work(w);
  const index_t gen = ++w.generation;
  const index_t T = std::max<index_t>(1, opt.threads);

  SpinBarrier barrier(T);
  RunCtx ctx;
  ctx.plan = &plan;
  ctx.w = &w;
  ctx.tol = opt.pivot_tol;
  ctx.nthreads = T;
  ctx.gen = gen;
  ctx.barrier = &barrier;

  if (T == 1) {
    worker_body(ctx, 0);
  } else {
    std::vector<std::thread> team;
    team.reserve(T);
    for (index_t tau = 0; tau < T; ++tau)
      team.emplace_back([&ctx, tau] { worker_body(ctx, tau); });
    for (auto& th : team) th.join();
  }

  const index_t bad = ctx.abort_col.load(std::memory_order_acquire);
  if (bad >= 0)
    throw SingularError(bad, "no acceptable pivot in factored column " +
                                 std::to_string(bad) +
                                 " (index in the analyzed ordering)");
}

void finalize_factor(const SymbolicPlan& plan, NumericFactor& f) {
  NumericWork& w = *f.work;
  f.plan = &plan;
  f.any_singular = false;
  f.factor_nnz = 0;
  f.reallocs = 0;
  f.stats = GpStats{};

  std::vector<index_t> local_final(plan.n);
  for (index_t q = 0; q < plan.n; ++q) local_final[q] = q;

  f.btf.resize(w.btf.size());
  for (std::size_t i = 0; i < w.btf.size(); ++i) {
    BtfWork& bw = w.btf[i];
    BtfBlockFactor& out = f.btf[i];
    out.singular = bw.singular;
    if (bw.singular) f.any_singular = true;
    if (bw.scalar) {
      out.lu.l = CscMatrix(1, 1);
      out.lu.u = CscMatrix(1, 1);
      if (!bw.singular) {
        out.lu.u.col_ptr = {0, 1};
        out.lu.u.row_idx = {0};
        out.lu.u.values = {bw.scalar_val};
        out.lu.pivot = Permutation::identity(1);
        f.factor_nnz += 1;
      }
      continue;
    }
    if (bw.singular) {
      out.lu = LuBlock{};
      continue;
    }
    bw.gp.relabel_l();
    bw.gp.l.finalize(out.lu.l);
    bw.gp.u.finalize(out.lu.u);
    out.lu.pivot = Permutation::from_forward(bw.gp.pinv);
    f.factor_nnz += out.lu.l.nnz() + out.lu.u.nnz();
    f.stats.accumulate(bw.gp.stats);
    f.reallocs += bw.gp.l.arena.growths() + bw.gp.u.arena.growths();
    for (index_t ii = 0; ii < bw.m; ++ii)
      local_final[bw.lo + ii] = bw.lo + bw.gp.pinv[ii];
  }

  f.domains.resize(w.domains.size());
  for (std::size_t d = 0; d < w.domains.size(); ++d) {
    DomainWork& dw = w.domains[d];
    const NdDomainPlan& dp = plan.nd_domains[d];
    NdDomainFactor& df = f.domains[d];
    df.nodes.resize(dw.nodes.size());
    for (std::size_t x = 0; x < dw.nodes.size(); ++x) {
      NodeWork& nx = dw.nodes[x];
      NdNodeFactor& nf = df.nodes[x];
      nx.diag.relabel_l();
      nx.diag.l.finalize(nf.diag.l);
      nx.diag.u.finalize(nf.diag.u);
      nf.diag.pivot = Permutation::from_forward(nx.diag.pinv);
      f.factor_nnz += nf.diag.l.nnz() + nf.diag.u.nnz();
      f.stats.accumulate(nx.diag.stats);
      f.reallocs += nx.diag.l.arena.growths() + nx.diag.u.arena.growths();
      const index_t base = dw.dom_lo + dp.tree.nodes[x].first_col;
      for (index_t ii = 0; ii < dp.tree.nodes[x].ncols; ++ii)
        local_final[base + ii] = base + nx.diag.pinv[ii];
      const index_t nanc = static_cast<index_t>(dw.anc[x].size());
      nf.lower.resize(nanc);
      nf.upper.resize(nanc);
      for (index_t k = 0; k < nanc; ++k) {
        const index_t a = dw.anc[x][k];
        nx.lower[k].finalize(nf.lower[k], dw.nodes[a].diag.pinv.data());
        nx.upper[k].finalize(nf.upper[k]);
        f.factor_nnz += nf.lower[k].nnz() + nf.upper[k].nnz();
        f.stats.accumulate(nx.lower_stats[k]);
        f.stats.accumulate(nx.upper_stats[k]);
        f.reallocs += nx.lower[k].arena.growths();
        f.reallocs += nx.upper[k].arena.growths();
      }
    }
  }

  std::vector<index_t> fwd(plan.n);
  for (index_t r = 0; r < plan.n; ++r)
    fwd[r] = local_final[plan.row_perm.forward[r]];
  f.perm_rows_final = Permutation::from_forward(std::move(fwd));
}

}  // namespace

NumericFactor factor_numeric(const SymbolicPlan& plan, const CscMatrix& a,
                             const NumericOptions& opt) {
  if (a.nrows != a.ncols || a.nrows != plan.n)
    throw Error(ErrorKind::bad_input,
                "matrix shape does not match the analyzed pattern");
  NumericFactor f;
  build_work(plan, a, f);
  run_numeric(plan, f, opt);
  finalize_factor(plan, f);
  return f;
}

void refactor(const SymbolicPlan& plan, NumericFactor& f, const CscMatrix& a2,
              const NumericOptions& opt) {
  if (!f.work) throw Error(ErrorKind::bad_input, "factor has no workspace");
  NumericWork& w = *f.work;
  if (a2.nrows != w.nrows || a2.ncols != w.ncols ||
      a2.col_ptr != w.orig_col_ptr || a2.row_idx != w.orig_row_idx)
    throw Error(ErrorKind::bad_input,
                "matrix pattern differs from the factored pattern");
  for (std::size_t k = 0; k < w.apc_src.size(); ++k)
    f.apc.values[k] = a2.values[w.apc_src[k]];
  refresh_block_values(w.bm, f.apc);
  run_numeric(plan, f, opt);
  finalize_factor(plan, f);
}

// ---------------------------------------------------------------------------
// Synchronization traces.
// ---------------------------------------------------------------------------

std::vector<std::vector<SyncAction>> worker_sync_traces(
    const NdDomainPlan& dom) {
  const index_t R = dom.deps.nworkers;
  const index_t levels = static_cast<index_t>(dom.deps.slevels.size());
  const index_t nn = dom.tree.nnodes();

  std::vector<index_t> depth(nn, 0);
  for (index_t x = nn - 1; x >= 0; --x) {
    const index_t par = dom.tree.nodes[x].parent;
    if (par >= 0) depth[x] = depth[par] + 1;
  }
  std::vector<std::vector<index_t>> anc(nn);
  for (index_t x = 0; x < nn; ++x)
    for (index_t p = dom.tree.nodes[x].parent; p >= 0;
         p = dom.tree.nodes[p].parent)
      anc[x].push_back(p);
  std::vector<index_t> role_leaf(R, -1);
  std::vector<std::vector<index_t>> role_led(
      R, std::vector<index_t>(levels + 1, -1));
  for (const DepNode& dn : dom.deps.nodes) {
    if (dn.treelevel < 0)
      role_leaf[dn.worker_lo] = dn.nd_node;
    else
      role_led[dn.worker_lo][dn.treelevel] = dn.nd_node;
  }

  auto windows = [&](index_t node) {
    return window_count(dom.tree.nodes[node].ncols);
  };
  auto desc_lo_of = [&](index_t x) { return subtree_first(dom.tree, x); };

  std::vector<std::vector<SyncAction>> traces(R);
  for (index_t r = 0; r < R; ++r) {
    auto& tr = traces[r];
    tr.push_back({SyncActionKind::Barrier, -1, -1, -1});  // after leaf phase

    for (index_t s = 1; s <= levels; ++s) {
      // Leaf-row upper block publishes.
      {
        const index_t x = role_leaf[r];
        const index_t j = anc[x][s - 1];
        for (index_t w = 0; w < windows(j); ++w)
          tr.push_back({SyncActionKind::PublishUpper, x, j, w});
      }
      // Interior-row upper blocks.
      for (index_t t = 1; t < s; ++t) {
        const index_t l = role_led[r][t];
        if (l < 0) continue;
        const index_t j = anc[l][s - t - 1];
        for (index_t w = 0; w < windows(j); ++w) {
          for (index_t e = desc_lo_of(l); e < l; ++e)
            tr.push_back({SyncActionKind::AwaitUpper, e, j, w});
          tr.push_back({SyncActionKind::PublishUpper, l, j, w});
        }
      }
      // Separator diagonal.
      {
        const index_t j = role_led[r][s];
        if (j >= 0)
          for (index_t w = 0; w < windows(j); ++w) {
            for (index_t e = desc_lo_of(j); e < j; ++e)
              tr.push_back({SyncActionKind::AwaitUpper, e, j, w});
            tr.push_back({SyncActionKind::PublishDiag, -1, j, w});
          }
      }
      // Lower blocks.
      {
        const index_t x = role_leaf[r];
        const index_t j = anc[x][s - 1];
        const DepNode& dj = dom.deps.nodes[j];
        const index_t team = dj.worker_hi - dj.worker_lo;
        const index_t nanc = static_cast<index_t>(anc[j].size());
        for (index_t k = 0; k < nanc; ++k) {
          if (dj.worker_lo + (k % team) != r) continue;
          for (index_t w = 0; w < windows(j); ++w) {
            tr.push_back({SyncActionKind::AwaitDiag, -1, j, w});
            for (index_t e = desc_lo_of(j); e < j; ++e)
              tr.push_back({SyncActionKind::AwaitUpper, e, j, w});
          }
        }
      }
      tr.push_back({SyncActionKind::Barrier, -1, -1, -1});
    }
  }
  return traces;
}

}  // namespace hblu
