#pragma once

#include <span>

#include "hblu/types.hpp"

namespace hblu {

// Compressed sparse column matrix. Invariants:
//   - col_ptr has ncols+1 nondecreasing entries, col_ptr[0] == 0
//   - row indices are strictly increasing within each column
//   - nnz() == col_ptr[ncols]
// Explicit zeros are ordinary entries; nothing in the library drops them.
struct CscMatrix {
  index_t nrows = 0;
  index_t ncols = 0;
  std::vector<index_t> col_ptr;  // size ncols + 1
  std::vector<index_t> row_idx;  // size nnz
  std::vector<double> values;    // size nnz

  CscMatrix() : col_ptr(1, 0) {}
  CscMatrix(index_t nr, index_t nc) : nrows(nr), ncols(nc), col_ptr(nc + 1, 0) {}

  index_t nnz() const { return col_ptr.empty() ? 0 : col_ptr.back(); }

  std::span<const index_t> col_rows(index_t j) const {
    return {row_idx.data() + col_ptr[j],
            static_cast<std::size_t>(col_ptr[j + 1] - col_ptr[j])};
  }
  std::span<const double> col_values(index_t j) const {
    return {values.data() + col_ptr[j],
            static_cast<std::size_t>(col_ptr[j + 1] - col_ptr[j])};
  }

  // Throws Error(bad_input) if any invariant is broken.
  void validate() const;
};

struct Triplets {
  index_t nrows = 0;
  index_t ncols = 0;
  std::vector<index_t> row;
  std::vector<index_t> col;
  std::vector<double> val;

  index_t size() const { return static_cast<index_t>(row.size()); }
  void add(index_t i, index_t j, double v) {
    row.push_back(i);
    col.push_back(j);
    val.push_back(v);
  }
};

// Assembles a CSC matrix from coordinate form. Duplicate coordinates are
// summed. Out-of-range coordinates raise Error(bad_input) naming the entry.
CscMatrix csc_from_triplets(const Triplets& t);

// b(rowp.forward[i], colp.forward[j]) = a(i, j). Permutation sizes must match
// the matrix dimensions.
CscMatrix permute(const CscMatrix& a, const Permutation& rowp,
                  const Permutation& colp);

// Transpose with sorted columns (two-pass counting).
CscMatrix transpose(const CscMatrix& a);

// Pattern of a + a^T on a square matrix, diagonal removed, values ignored
// (all ones). Input need not be pattern symmetric.
CscMatrix symmetrized_pattern(const CscMatrix& a);

// y += alpha * a * x (dense vectors).
void spmv(const CscMatrix& a, const double* x, double* y, double alpha = 1.0);

// Max absolute row sum.
double norm_inf(const CscMatrix& a);

bool same_pattern(const CscMatrix& a, const CscMatrix& b);
bool same_matrix(const CscMatrix& a, const CscMatrix& b);  // bitwise values

}  // namespace hblu
