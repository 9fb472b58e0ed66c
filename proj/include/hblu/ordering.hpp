#pragma once

#include <vector>

#include "hblu/csc.hpp"
#include "hblu/types.hpp"

namespace hblu {

// Row permutation that puts a maximum-bottleneck perfect matching on the
// diagonal: among all row permutations making the diagonal structurally full,
// the result maximizes min_j |a(row, j)| over the matched entries. Ties are
// resolved so that the identity is returned whenever the identity already
// achieves the optimal bottleneck. Apply as permute(a, result, identity).
// Throws StructurallySingularError when no perfect matching exists.
Permutation mwcm(const CscMatrix& a);

// Symmetric permutation grouping the strongly connected components of the
// directed graph of a (edge j -> i for every entry a(i,j) != 0) so that the
// permuted matrix is block upper triangular. Components are emitted in
// dependency order; vertices inside a component keep ascending original
// order. Block b occupies new indices [block_ptr[b], block_ptr[b+1]).
struct BtfResult {
  Permutation perm;
  std::vector<index_t> block_ptr;

  index_t nblocks() const {
    return static_cast<index_t>(block_ptr.size()) - 1;
  }
};
BtfResult btf_scc(const CscMatrix& a);

// Approximate minimum degree ordering computed on the symmetrized pattern of
// a (a + a^T, diagonal ignored). Uses a quotient graph with supervariable
// merging, aggressive element absorption, and the classic two-term external
// degree bound. forward[old] = elimination position.
Permutation amd_order(const CscMatrix& a);

// Binary dissection tree over the columns of a permuted matrix. Nodes are
// stored in postorder (children before parents), so an ancestor always has a
// higher node index than its descendants. Leaves have height 0; an internal
// node holds the separator columns of its two children and has
// height = 1 + max(child heights). first_col/ncols describe the node's own
// column range in the permuted ordering; the ranges of all nodes partition
// [0, n).
struct NdNode {
  index_t first_col = 0;
  index_t ncols = 0;
  index_t parent = -1;  // -1 for the root
  index_t left = -1;    // -1 for leaves
  index_t right = -1;
  index_t height = 0;
};

struct NdTree {
  std::vector<NdNode> nodes;    // postorder
  std::vector<index_t> leaves;  // leaf node ids, left to right

  index_t nnodes() const { return static_cast<index_t>(nodes.size()); }
  index_t nleaves() const { return static_cast<index_t>(leaves.size()); }
  index_t root() const { return nnodes() - 1; }
  // True when a is a proper ancestor of d.
  bool is_ancestor(index_t a, index_t d) const {
    while (d != -1 && d < a) d = nodes[d].parent;
    return d == a;
  }
};

// Nested dissection of the symmetrized pattern of a into nleaves leaf
// subgraphs (nleaves must be a power of two). Each level splits the current
// vertex set with a small vertex separator found by matching on the halo of
// a breadth-first half; leaf subgraphs are ordered internally by amd_order,
// separator columns keep ascending original order. The returned permutation
// maps original columns to the dissection ordering; the tree describes which
// columns belong to which node.
struct NdResult {
  Permutation perm;
  NdTree tree;
};
NdResult nd_order(const CscMatrix& a, index_t nleaves);

}  // namespace hblu
