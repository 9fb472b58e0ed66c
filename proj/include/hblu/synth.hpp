#pragma once

#include <cstdint>

#include "hblu/csc.hpp"

namespace hblu {

// Deterministic synthetic matrices used by the benchmark driver and the test
// suite. Every generator is a pure function of its arguments.

// k-by-k five-point mesh Laplacian (n = k^2): 4 on the diagonal, -1 towards
// each grid neighbor. Symmetric, irreducible, well conditioned.
CscMatrix synth_grid5(index_t k);

// Block upper-triangular matrix with `nblocks` irreducible diagonal blocks of
// size `bsize` (sparse, diagonally dominant, wired into a cycle) and sparse
// random couplings strictly above the block diagonal; `coupling_frac` scales
// how many coupling entries appear per block pair. Exercises the small-block
// path: the block structure is recoverable from the pattern alone.
CscMatrix synth_block_diag(index_t nblocks, index_t bsize,
                           double coupling_frac, std::uint64_t seed);

// Arrowhead: diagonal plus a dense final row and column. Maximally hostile
// to a natural-order factorization, tame after a fill-reducing ordering.
CscMatrix synth_arrowhead(index_t n);

// Dense-diagonal random matrix: zero-free dominant diagonal plus roughly
// `density * n^2` uniformly placed off-diagonal entries. Structurally
// nonsingular by construction.
CscMatrix synth_random_nonsingular(index_t n, double density,
                                   std::uint64_t seed);

}  // namespace hblu
