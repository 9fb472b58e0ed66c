#pragma once

#include <memory>

#include "hblu/csc.hpp"

namespace hblu {

// Work counters for the factorization kernels. flops counts multiply-adds in
// the sparse column solves plus one per division; reach_visits counts nodes
// placed on the DFS output. Together they bound the kernel's running time.
struct GpStats {
  index_t columns = 0;
  index_t reach_visits = 0;
  double flops = 0.0;
  index_t arena_growths = 0;

  void accumulate(const GpStats& o) {
    columns += o.columns;
    reach_visits += o.reach_visits;
    flops += o.flops;
    arena_growths += o.arena_growths;
  }
};

// One factored diagonal block. L is strictly lower triangular with an
// implicit unit diagonal; U holds the diagonal. Row indices of both are in
// pivotal order. pivot.forward maps block-local original row -> pivotal row.
struct LuBlock {
  CscMatrix l;
  CscMatrix u;
  Permutation pivot;
};

// Append-only (row, value) pair storage. Chunks never move once allocated, so
// a published column stays readable while later columns grow the store. Reset
// keeps the capacity for reuse across a refactorization sequence.
class ColumnArena {
public:
  void reserve(index_t cap);
  void reset();
  // Returns stable storage for len pairs; grows geometrically when the
  // current chunk is exhausted and counts each growth event.
  std::pair<index_t*, double*> append(index_t len);
  index_t growths() const { return growths_; }
  index_t used() const { return used_; }
  index_t capacity() const { return capacity_; }

private:
  struct Chunk {
    std::unique_ptr<index_t[]> rows;
    std::unique_ptr<double[]> vals;
    index_t cap = 0;
    index_t used = 0;
  };
  std::vector<Chunk> chunks_;
  index_t used_ = 0;
  index_t capacity_ = 0;
  index_t growths_ = 0;
  std::size_t active_ = 0;  // chunk accepting appends
};

// Column-major factor storage under construction. Single writer per store;
// concurrent readers may access any column whose index they have observed
// through a SyncCell (descriptor arrays are preallocated, chunks are stable).
struct ColumnStore {
  index_t nrows = 0;
  index_t ncols = 0;
  std::vector<const index_t*> rows;
  std::vector<const double*> vals;
  std::vector<index_t> len;
  ColumnArena arena;

  void init(index_t nr, index_t nc, index_t est_nnz);
  void reset();
  void push_column(index_t col, const index_t* r, const double* v, index_t n);
  index_t total_nnz() const;
  // Copies into a CSC, applying an optional row relabel map, sorting rows
  // within each column. Reuses the output's buffers.
  void finalize(CscMatrix& out, const index_t* row_relabel = nullptr) const;
  // In-place row relabel of all stored columns (used once pivots are final).
  void relabel_rows(const index_t* map);
};

// Dense-value scatter workspace with generation marks and the DFS scratch for
// reach. One per worker; init once per block row extent.
struct SparseAccumulator {
  std::vector<double> val;
  std::vector<index_t> mark;
  std::vector<index_t> pattern;  // DFS postorder; consume in reverse
  std::vector<index_t> dfs_stack;
  std::vector<index_t> dfs_pos;
  index_t generation = 0;

  void init(index_t n);
  void new_column();
  bool marked(index_t i) const { return mark[i] == generation; }
  // Marks i and zeroes its slot if newly touched; returns whether it was new.
  bool touch(index_t i) {
    if (mark[i] == generation) return false;
    mark[i] = generation;
    val[i] = 0.0;
    pattern.push_back(i);
    return true;
  }
};

// Topological closure of the seed rows over the partial factor's L graph:
// follow edges r -> rows(l column pinv[r]) for pivotal r. Appends postorder
// to spa.pattern (consume in reverse); marks and zero-fills spa.val slots.
void reach(const ColumnStore& l, const index_t* pinv, const index_t* seeds,
           index_t nseeds, SparseAccumulator& spa, GpStats& st);

// Sparse lower triangular solve over the reach pattern: spa.val holds the
// scattered right-hand side on entry and the solution on exit.
void column_solve(const ColumnStore& l, const index_t* pinv,
                  SparseAccumulator& spa, GpStats& st);

// Threshold pivot choice over the non-pivotal rows of the current pattern.
// Keeps diag_row when |val(diag_row)| >= pivot_tol * max and nonzero; ties on
// the maximum go to the lowest row index. diag_row < 0 means no diagonal
// candidate. Throws SingularError(column) when every candidate is zero.
index_t pivot_select(const SparseAccumulator& spa, const index_t* pinv,
                     index_t diag_row, double pivot_tol, index_t column);

// Pattern-discovering sparse matrix-vector product: accumulates
//   spa += scale * sum over k of store.column(ucols[k]) * uvals[k]
// marking new rows as it goes (the pattern union of the touched columns).
void axpy_columns(const ColumnStore& store, const index_t* ucols,
                  const double* uvals, index_t count, SparseAccumulator& spa,
                  GpStats& st, double scale = 1.0);

// Left-looking LU of one square block with threshold partial pivoting
// confined to the block. est_l/est_u size the arenas (pass the symbolic
// estimate already scaled by the headroom factor; <=0 picks a default).
LuBlock factor_block_gp(const CscMatrix& block, double pivot_tol,
                        GpStats& stats, index_t est_l = 0, index_t est_u = 0);

// Shared state for factoring one diagonal block column by column. The
// separator path feeds reduced columns through the accumulator; the plain
// path feeds raw block columns. Both produce identical results for identical
// fed columns, which keeps serial and parallel numerics bitwise equal.
struct DiagGpState {
  ColumnStore l, u;  // l holds strictly-lower candidates in original rows
  std::vector<index_t> pinv;  // original row -> pivotal step, -1 while unset
  std::vector<index_t> piv;   // pivotal step -> original row
  GpStats stats;
  std::vector<index_t> scratch_rows_u, scratch_rows_l;
  std::vector<double> scratch_vals_u, scratch_vals_l;

  void init(index_t n, index_t est_l, index_t est_u);
  void reset();
  // Factors one column whose right-hand side is already scattered in spa
  // (pattern = seed rows). Returns the pivot's original row.
  index_t step(index_t col, double pivot_tol, SparseAccumulator& spa);
  // After the last step: relabel l rows to pivotal order.
  void relabel_l();
  LuBlock finish() const;
};

}  // namespace hblu
