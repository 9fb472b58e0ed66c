#include "hblu/csc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hblu {

void CscMatrix::validate() const {
  if (nrows < 0 || ncols < 0)
    throw Error(ErrorKind::bad_input, "negative dimension");
  if (static_cast<index_t>(col_ptr.size()) != ncols + 1)
    throw Error(ErrorKind::bad_input, "col_ptr size mismatch");
  if (col_ptr[0] != 0)
    throw Error(ErrorKind::bad_input, "col_ptr[0] must be 0");
  for (index_t j = 0; j < ncols; ++j) {
    if (col_ptr[j + 1] < col_ptr[j])
      throw Error(ErrorKind::bad_input,
                  "col_ptr decreasing at column " + std::to_string(j));
    for (index_t p = col_ptr[j]; p < col_ptr[j + 1]; ++p) {
      if (row_idx[p] < 0 || row_idx[p] >= nrows)
        throw Error(ErrorKind::bad_input,
                    "row index out of range in column " + std::to_string(j));
      if (p > col_ptr[j] && row_idx[p] <= row_idx[p - 1])
        throw Error(ErrorKind::bad_input,
                    "row indices not strictly increasing in column " +
                        std::to_string(j));
    }
  }
  if (static_cast<index_t>(row_idx.size()) != nnz() ||
      static_cast<index_t>(values.size()) != nnz())
    throw Error(ErrorKind::bad_input, "array sizes disagree with col_ptr");
}

CscMatrix csc_from_triplets(const Triplets& t) {
  if (t.nrows < 0 || t.ncols < 0)
    throw Error(ErrorKind::bad_input, "negative dimension");
  const index_t nz = t.size();
  for (index_t k = 0; k < nz; ++k) {
    if (t.row[k] < 0 || t.row[k] >= t.nrows || t.col[k] < 0 ||
        t.col[k] >= t.ncols)
      throw Error(ErrorKind::bad_input,
                  "triplet " + std::to_string(k) + " out of range: (" +
                      std::to_string(t.row[k]) + ", " +
                      std::to_string(t.col[k]) + ")");
  }

  // Count entries per column, then bucket, then sum duplicates per column.
  CscMatrix a(t.nrows, t.ncols);
  std::vector<index_t> count(t.ncols, 0);
  for (index_t k = 0; k < nz; ++k) count[t.col[k]]++;
  std::vector<index_t> bucket_ptr(t.ncols + 1, 0);
  for (index_t j = 0; j < t.ncols; ++j)
    bucket_ptr[j + 1] = bucket_ptr[j] + count[j];

  std::vector<index_t> order(nz);
  {
    std::vector<index_t> next = bucket_ptr;
    for (index_t k = 0; k < nz; ++k) order[next[t.col[k]]++] = k;
  }

  a.row_idx.reserve(nz);
  a.values.reserve(nz);
  std::vector<std::pair<index_t, double>> col_entries;
  for (index_t j = 0; j < t.ncols; ++j) {
    col_entries.clear();
    for (index_t p = bucket_ptr[j]; p < bucket_ptr[j + 1]; ++p) {
      index_t k = order[p];
      col_entries.emplace_back(t.row[k], t.val[k]);
    }
    std::stable_sort(col_entries.begin(), col_entries.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    for (std::size_t p = 0; p < col_entries.size(); ++p) {
      if (!a.row_idx.empty() &&
          static_cast<index_t>(a.row_idx.size()) > a.col_ptr[j] &&
          a.row_idx.back() == col_entries[p].first) {
        a.values.back() += col_entries[p].second;
      } else {
        a.row_idx.push_back(col_entries[p].first);
        a.values.push_back(col_entries[p].second);
      }
    }
    a.col_ptr[j + 1] = static_cast<index_t>(a.row_idx.size());
  }
  return a;
}

CscMatrix permute(const CscMatrix& a, const Permutation& rowp,
                  const Permutation& colp) {
  if (rowp.size() != a.nrows || colp.size() != a.ncols)
    throw Error(ErrorKind::bad_input, "permutation size mismatch");
  CscMatrix b(a.nrows, a.ncols);
  b.col_ptr.assign(a.ncols + 1, 0);
  for (index_t j = 0; j < a.ncols; ++j)
    b.col_ptr[colp.forward[j] + 1] = a.col_ptr[j + 1] - a.col_ptr[j];
  for (index_t j = 0; j < a.ncols; ++j) b.col_ptr[j + 1] += b.col_ptr[j];
  b.row_idx.resize(a.nnz());
  b.values.resize(a.nnz());
  std::vector<std::pair<index_t, double>> col_entries;
  for (index_t j = 0; j < a.ncols; ++j) {
    const index_t jj = colp.forward[j];
    col_entries.clear();
    for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p)
      col_entries.emplace_back(rowp.forward[a.row_idx[p]], a.values[p]);
    std::sort(col_entries.begin(), col_entries.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    index_t q = b.col_ptr[jj];
    for (const auto& [r, v] : col_entries) {
      b.row_idx[q] = r;
      b.values[q] = v;
      ++q;
    }
  }
  return b;
}

CscMatrix transpose(const CscMatrix& a) {
  CscMatrix t(a.ncols, a.nrows);
  t.col_ptr.assign(a.nrows + 1, 0);
  for (index_t p = 0; p < a.nnz(); ++p) t.col_ptr[a.row_idx[p] + 1]++;
  for (index_t i = 0; i < a.nrows; ++i) t.col_ptr[i + 1] += t.col_ptr[i];
  t.row_idx.resize(a.nnz());
  t.values.resize(a.nnz());
  std::vector<index_t> next(t.col_ptr.begin(), t.col_ptr.end() - 1);
  for (index_t j = 0; j < a.ncols; ++j)
    for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) {
      index_t q = next[a.row_idx[p]]++;
      t.row_idx[q] = j;
      t.values[q] = a.values[p];
    }
  return t;
}

CscMatrix symmetrized_pattern(const CscMatrix& a) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "symmetrized_pattern needs square input");
  const index_t n = a.ncols;
  const CscMatrix at = transpose(a);
  CscMatrix s(n, n);
  s.col_ptr.assign(n + 1, 0);
  std::vector<index_t> mark(n, -1);
  // First pass: counts.
  for (index_t j = 0; j < n; ++j) {
    index_t cnt = 0;
    for (const CscMatrix* m : {&a, &at})
      for (index_t i : m->col_rows(j))
        if (i != j && mark[i] != j) {
          mark[i] = j;
          ++cnt;
        }
    s.col_ptr[j + 1] = cnt;
  }
  for (index_t j = 0; j < n; ++j) s.col_ptr[j + 1] += s.col_ptr[j];
  s.row_idx.resize(s.col_ptr[n]);
  s.values.assign(s.col_ptr[n], 1.0);
  std::fill(mark.begin(), mark.end(), -1);
  for (index_t j = 0; j < n; ++j) {
    index_t q = s.col_ptr[j];
    for (const CscMatrix* m : {&a, &at})
      for (index_t i : m->col_rows(j))
        if (i != j && mark[i] != j) {
          mark[i] = j;
          s.row_idx[q++] = i;
        }
    std::sort(s.row_idx.begin() + s.col_ptr[j], s.row_idx.begin() + q);
  }
  return s;
}

void spmv(const CscMatrix& a, const double* x, double* y, double alpha) {
  for (index_t j = 0; j < a.ncols; ++j) {
    const double xj = alpha * x[j];
    if (xj == 0.0) continue;
    for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p)
      y[a.row_idx[p]] += a.values[p] * xj;
  }
}

double norm_inf(const CscMatrix& a) {
  std::vector<double> rowsum(a.nrows, 0.0);
  for (index_t p = 0; p < a.nnz(); ++p)
    rowsum[a.row_idx[p]] += std::fabs(a.values[p]);
  double m = 0.0;
  for (double r : rowsum) m = std::max(m, r);
  return m;
}

bool same_pattern(const CscMatrix& a, const CscMatrix& b) {
  return a.nrows == b.nrows && a.ncols == b.ncols && a.col_ptr == b.col_ptr &&
         a.row_idx == b.row_idx;
}

bool same_matrix(const CscMatrix& a, const CscMatrix& b) {
  if (!same_pattern(a, b)) return false;
  return std::memcmp(a.values.data(), b.values.data(),
                     a.values.size() * sizeof(double)) == 0;
}

}  // namespace hblu
