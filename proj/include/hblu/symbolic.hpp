#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hblu/csc.hpp"
#include "hblu/ordering.hpp"

namespace hblu {

// ---------------------------------------------------------------------------
// Structure analysis and memory planning.
//
// The analysis runs once per sparsity pattern and produces a SymbolicPlan:
// the composed fill-reducing permutations, a classification of the diagonal
// blocks into many-small (factored independently, one thread each) versus
// few-large (factored cooperatively through a dissection tree), per-column
// nonzero estimates for every factor block, and the worker schedule for the
// cooperative phase. The numeric phase consumes the plan read-only, so one
// plan can be reused for any matrix with the same pattern.
// ---------------------------------------------------------------------------

// How a coarse diagonal block will be factored.
enum class BlockKind : std::uint8_t {
  FineBtf,  // small block: sequential kernel, blocks spread across threads
  FineNd,   // large block: dissection into a 2D block hierarchy, cooperative
};

// Result of the coarse decomposition: a row matching making the diagonal
// zero-free, a symmetric permutation to block upper triangular form, and the
// classification of each diagonal block by size.
struct CoarsePlan {
  Permutation perm_mwcm;              // rows only
  Permutation perm_btf;               // symmetric
  std::vector<index_t> block_offsets; // size nblocks()+1, ascending
  std::vector<BlockKind> block_kind;  // size nblocks()
  index_t nd_threshold = 0;           // classification threshold used

  index_t nblocks() const {
    return static_cast<index_t>(block_kind.size());
  }
  index_t block_size(index_t b) const {
    return block_offsets[b + 1] - block_offsets[b];
  }
};

// Composes the row matching with the strongly-connected-component permutation
// and classifies each diagonal block: size > nd_threshold selects the
// cooperative path, anything smaller the per-thread sequential path.
// Throws StructurallySingularError when no zero-free diagonal exists.
CoarsePlan coarse_decompose(const CscMatrix& a, index_t nd_threshold);

// Degenerate coarse plan treating the whole matrix as a single large block
// (ablation mode: identity matching and no block-triangular permutation).
CoarsePlan coarse_whole_nd(index_t n, index_t nd_threshold);

// ---------------------------------------------------------------------------
// Elimination tree.
// ---------------------------------------------------------------------------

struct EliminationTree {
  std::vector<index_t> parent;  // parent[i] > i, or -1 for roots

  index_t size() const { return static_cast<index_t>(parent.size()); }
};

enum class EtreeMode : std::uint8_t {
  PatternSymmetric,  // tree of A + A^T: cheap, right when pivoting is mild
  ColAat,            // tree of A^T A: robust bound under heavy row pivoting
};

// Standard elimination tree via path-compressed ancestor union.
EliminationTree etree_build(const CscMatrix& a, EtreeMode mode);

// ---------------------------------------------------------------------------
// Per-block symbolic results.
// ---------------------------------------------------------------------------

// Inclusive (min,max) row range of one factor column; empty when lo < 0.
struct RowRange {
  index_t lo = -1;
  index_t hi = -1;

  bool empty() const { return lo < 0; }
};

// Per-column row ranges of one off-diagonal factor block.
struct RowRangeBound {
  std::vector<RowRange> col;  // size = block column count
};

// Exact no-pivot symbolic factorization of a square block with a zero-free
// diagonal (the diagonal entry is assumed present even when the stored
// pattern omits it). Counts include the diagonal in both factors.
struct DiagSymbolic {
  std::vector<index_t> lcount;              // per column, incl. diagonal
  std::vector<index_t> ucount;              // per column, incl. diagonal
  double flops = 0.0;                       // sum over pivots of strictly-
                                            // below * strictly-right counts
  EliminationTree etree;                    // tree of the input pattern
  std::vector<std::vector<index_t>> upat;   // strictly-upper pattern per
                                            // column; kept only on request
};

// keep_upper_patterns retains `upat` for the off-diagonal recurrences below;
// pass false when only counts are wanted.
DiagSymbolic diag_symbolic(const CscMatrix& a, EtreeMode mode,
                           bool keep_upper_patterns);

// Column counts plus row ranges for one off-diagonal block.
struct OffBlockSymbolic {
  std::vector<index_t> count;  // per column
  RowRangeBound range;
};

// Pattern of a lower off-diagonal block: column c is the union of the block's
// own column c with the patterns of every earlier column t listed in the
// diagonal block's upper pattern of c. Exact when no pivoting occurs.
// `a_ki` holds the block rows (foreign row space, nrows = a_ki.nrows).
OffBlockSymbolic nd_lower_symbolic(const CscMatrix& a_ki,
                                   const DiagSymbolic& diag);

// Pattern bound of an upper off-diagonal block: column c covers every node
// encountered walking the diagonal block's elimination tree upward from each
// entry of a_ik(:, c), stopping at already-visited nodes. Superset of the
// true backsolve pattern; exact for symmetric patterns without pivoting.
// `a_ik` rows live in the diagonal block's index space.
OffBlockSymbolic nd_upper_symbolic(const CscMatrix& a_ik,
                                   const EliminationTree& etree);

// Dense-interval bound for one Schur product column: the rows contributed
// through columns t in [ucol.lo, ucol.hi] of the lower block, collapsed to
// one inclusive row interval. Empty ranges contribute nothing.
RowRange product_interval(const RowRangeBound& lower_ranges, RowRange ucol);

// ---------------------------------------------------------------------------
// Worker schedule for the cooperative (dissection) phase.
// ---------------------------------------------------------------------------

// One dissection-tree node viewed as a schedule entry. Leaves sit at
// treelevel -1 and own their diagonal block plus the lower off-diagonal
// blocks of their columns; internal nodes sit at treelevel = height and add
// the blocks of their separator columns. A node's workers are the contiguous
// union of its children's workers.
struct DepNode {
  index_t nd_node = 0;    // matching NdTree node id
  int treelevel = -1;     // -1 for leaves, tree height otherwise
  index_t worker_lo = 0;  // workers [worker_lo, worker_hi)
  index_t worker_hi = 0;
  index_t parent = -1;
  // Owned 2D blocks as (row_node, col_node): the diagonal, the lower blocks
  // of this node's columns, and the upper blocks of this node's rows.
  std::vector<std::array<index_t, 2>> owned;
};

struct DependencyTree {
  std::vector<DepNode> nodes;  // ids match the NdTree
  index_t nworkers = 0;
  // slevels[s-1] lists the separator nodes factored during pass s, ascending;
  // each pass walks the tree bottom-up to that height.
  std::vector<std::vector<index_t>> slevels;
};

// Maps workers onto the dissection tree: worker k takes leaf k. Requires
// p == tree.nleaves() (callers multiplex fewer physical threads over the
// worker roles; the schedule itself is fixed by the tree).
DependencyTree build_dependency_tree(const NdTree& tree, index_t p);

// ---------------------------------------------------------------------------
// The full plan.
// ---------------------------------------------------------------------------

// Plan for one small diagonal block.
struct FineBtfBlockPlan {
  index_t block = 0;  // coarse block id
  Permutation perm_amd;
  std::vector<index_t> lcount;  // per column, incl. diagonal
  std::vector<index_t> ucount;  // per column, incl. diagonal
  double flops = 0.0;
  index_t alloc_l = 0;  // entry budget incl. headroom
  index_t alloc_u = 0;
  index_t owner = 0;  // thread group from the balance partition
};

// Estimate for one off-diagonal 2D block of a dissection domain.
struct NdBlockPlan {
  std::vector<index_t> count;  // per column
  RowRangeBound range;
  index_t alloc = 0;
};

// Per dissection-tree node: diagonal symbolic plus one lower and one upper
// off-diagonal block per ancestor, nearest ancestor first. Lower block k
// holds rows of ancestor k and this node's columns; upper block k holds this
// node's rows and ancestor k's columns.
struct NdNodePlan {
  std::vector<index_t> diag_lcount;
  std::vector<index_t> diag_ucount;
  EliminationTree etree;
  index_t alloc_l = 0;
  index_t alloc_u = 0;
  std::vector<NdBlockPlan> lower;
  std::vector<NdBlockPlan> upper;
};

// Plan for one large diagonal block factored cooperatively.
struct NdDomainPlan {
  index_t block = 0;      // coarse block id
  Permutation perm_m2;    // local row matching (identity when the global
                          // matching already cleared the diagonal)
  Permutation perm_nd;    // local symmetric dissection ordering
  NdTree tree;
  std::vector<NdNodePlan> nodes;  // size tree.nnodes()
  DependencyTree deps;
};

struct SymbolicOptions {
  index_t threads = 1;      // groups for the small-block partition
  index_t nd_leaves = 4;    // dissection leaves (worker roles), power of two
  index_t nd_threshold = 0; // 0 selects max(1000, 2 * nd_leaves)
  bool no_btf = false;      // whole matrix as one cooperative block
  bool natural_order = false;  // skip fill-reducing orderings (ablation)
  EtreeMode etree_mode = EtreeMode::PatternSymmetric;
  double alloc_headroom = 1.2;  // allocation = ceil(headroom * estimate)
};

struct SymbolicPlan {
  index_t n = 0;
  index_t threads = 1;
  SymbolicOptions options;  // as resolved (threshold filled in)
  CoarsePlan coarse;
  // Full composed pattern-time permutations; the numeric phase permutes the
  // input once with these. Runtime pivoting is layered on top separately.
  Permutation row_perm;
  Permutation col_perm;
  std::vector<FineBtfBlockPlan> btf_blocks;
  // btf_groups[g] lists indices into btf_blocks owned by thread group g.
  std::vector<std::vector<index_t>> btf_groups;
  std::vector<NdDomainPlan> nd_domains;

  // Total planned factor entries (diagonal counted once per factor).
  index_t total_factor_alloc() const;
};

// Runs the whole analysis: coarse decomposition, per-small-block ordering,
// counts and thread partition, and per-large-block dissection symbolic.
SymbolicPlan symbolic_analyze(const CscMatrix& a, const SymbolicOptions& opt);

// Process-wide count of completed analyses. Lets a driver that factors a
// stream of same-pattern matrices assert the plan was built once and reused.
index_t symbolic_run_count();

// Versioned binary image of a plan; deserialization validates and throws
// Error{bad_input} on malformed bytes. Plans serialize bit-identically when
// produced from identical inputs.
std::vector<std::uint8_t> plan_serialize(const SymbolicPlan& plan);
SymbolicPlan plan_deserialize(const std::vector<std::uint8_t>& bytes);

}  // namespace hblu
