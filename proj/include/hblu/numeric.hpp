#pragma once

#include <memory>
#include <span>
#include <vector>

#include "hblu/blocked.hpp"
#include "hblu/gp.hpp"
#include "hblu/symbolic.hpp"

namespace hblu {

// ---------------------------------------------------------------------------
// Parallel numeric factorization.
//
// The numeric phase consumes a SymbolicPlan read-only. Small diagonal blocks
// are factored independently, spread over threads by the plan's balance
// partition. Each large block runs the cooperative schedule: every worker
// role factors its own leaf diagonal block and lower blocks, then the team
// sweeps the dissection tree bottom-up once per separator level, exchanging
// readiness through per-(block, column-window) flags instead of global
// barriers. All floating-point work is organized per role with fixed
// reduction and update orders, so results are bitwise identical for any
// thread count.
// ---------------------------------------------------------------------------

// Columns are published and awaited in windows of this many columns.
inline constexpr index_t kSyncWindow = 64;

struct NumericOptions {
  index_t threads = 1;      // physical threads; roles are multiplexed on them
  double pivot_tol = 0.001; // threshold for keeping the diagonal as pivot
};

// One factored small diagonal block. A singular block is recorded and left
// empty; the other blocks still factor.
struct BtfBlockFactor {
  LuBlock lu;
  bool singular = false;
};

// One dissection-tree node's slice of the 2D factor grid: the diagonal LU
// plus one lower and one upper off-diagonal block per ancestor (nearest
// ancestor first, matching the plan). Lower block rows are ancestor-local
// pivotal indices; upper block rows are this node's pivotal indices.
struct NdNodeFactor {
  LuBlock diag;
  std::vector<CscMatrix> lower;
  std::vector<CscMatrix> upper;
};

struct NdDomainFactor {
  std::vector<NdNodeFactor> nodes;
};

struct NumericWork;  // reusable workspace, defined in the implementation

// Complete factorization of one matrix under one plan. The plan must outlive
// the factor. `apc` keeps the fully permuted input: its diagonal blocks are
// what the factors reproduce, and its off-diagonal entries carry the coupling
// between coarse blocks for the solve phase.
struct NumericFactor {
  const SymbolicPlan* plan = nullptr;
  CscMatrix apc;
  std::vector<BtfBlockFactor> btf;      // one per plan.btf_blocks entry
  std::vector<NdDomainFactor> domains;  // one per plan.nd_domains entry
  // Row permutation with runtime pivots folded in: forward[original row] =
  // final factored position. Columns keep plan->col_perm.
  Permutation perm_rows_final;
  bool any_singular = false;  // some small block was numerically singular
  index_t factor_nnz = 0;     // stored L+U entries over all factored blocks
  index_t reallocs = 0;       // arena growth events beyond the planned sizes
  GpStats stats;
  std::unique_ptr<NumericWork> work;

  NumericFactor();
  ~NumericFactor();
  NumericFactor(NumericFactor&&) noexcept;
  NumericFactor& operator=(NumericFactor&&) noexcept;
};

// Factors `a` under `plan`. Throws SingularError with the (permuted) global
// column index when a cooperative-block pivot column has no usable nonzero;
// singular small blocks are recorded per block instead and flagged on the
// result. Thread count is independent of the plan and does not change any
// produced bit.
NumericFactor factor_numeric(const SymbolicPlan& plan, const CscMatrix& a,
                             const NumericOptions& opt = {});

// Factors a new matrix with the same pattern in place, reusing orderings,
// the worker schedule, and all factor allocations. Rejects a pattern
// mismatch with Error{bad_input} before doing any numeric work.
void refactor(const SymbolicPlan& plan, NumericFactor& factor,
              const CscMatrix& a2, const NumericOptions& opt = {});

// ---------------------------------------------------------------------------
// Reduction primitive.
// ---------------------------------------------------------------------------

// One Schur contribution: the lower block's columns (keyed by the producing
// node id) multiplied by one sparse column of an upper block. `urows` index
// the lower block's columns; they are the upper column's row pattern in the
// producing block's pivotal order.
struct ContributionTerm {
  index_t block_key = 0;
  const ColumnStore* lcols = nullptr;
  const index_t* urows = nullptr;
  const double* uvals = nullptr;
  index_t ulen = 0;
};

// Subtracts every term's product from the column scattered in `spa`,
// applying the terms in ascending block_key order regardless of the order
// they arrive in, so the result is bitwise independent of scheduling.
// Rows not yet in the pattern are discovered and added.
void reduce_contribution(SparseAccumulator& spa,
                         std::span<ContributionTerm> terms, GpStats& st);

// ---------------------------------------------------------------------------
// Synchronization schedule audit.
// ---------------------------------------------------------------------------

// The cooperative executor's publish/await behavior at window granularity,
// reproduced as data so a scheduler simulation can certify it deadlock-free
// and check every wait against the dependency tree.
enum class SyncActionKind : std::uint8_t {
  AwaitUpper,    // wait for window `window` of upper block (row_node, col_node)
  AwaitDiag,     // wait for window `window` of node col_node's diagonal
  PublishUpper,  // publish window of upper block (row_node, col_node)
  PublishDiag,   // publish window of node col_node's diagonal
  Barrier,       // all roles rendezvous
};

struct SyncAction {
  SyncActionKind kind = SyncActionKind::Barrier;
  index_t row_node = -1;
  index_t col_node = -1;
  index_t window = -1;
};

// Ordered action list per worker role for one cooperative domain: the leaf
// phase barrier, then per separator level the publishes and awaits each role
// performs, ending each level with a barrier.
std::vector<std::vector<SyncAction>> worker_sync_traces(
    const NdDomainPlan& dom);

}  // namespace hblu
