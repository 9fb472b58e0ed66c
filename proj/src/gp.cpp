#include "hblu/gp.hpp"

#include <algorithm>
#include <cmath>

namespace hblu {

void ColumnArena::reserve(index_t cap) {
  if (cap <= 0) cap = 16;
  if (capacity_ >= cap) return;
  Chunk c;
  c.cap = cap - capacity_;
  c.rows = std::make_unique<index_t[]>(c.cap);
  c.vals = std::make_unique<double[]>(c.cap);
  capacity_ += c.cap;
  chunks_.push_back(std::move(c));
}

void ColumnArena::reset() {
  for (auto& c : chunks_) c.used = 0;
  used_ = 0;
  growths_ = 0;
  active_ = 0;
}

std::pair<index_t*, double*> ColumnArena::append(index_t len) {
  if (len == 0) return {nullptr, nullptr};
  if (chunks_.empty()) reserve(std::max<index_t>(len, 16));
  while (active_ < chunks_.size() &&
         chunks_[active_].used + len > chunks_[active_].cap)
    ++active_;
  if (active_ == chunks_.size()) {
    // Grow geometrically: each new chunk is half the current capacity, so the
    // total advances by roughly 1.5x per growth event.
    Chunk c;
    c.cap = std::max(len, (capacity_ + 1) / 2);
    c.rows = std::make_unique<index_t[]>(c.cap);
    c.vals = std::make_unique<double[]>(c.cap);
    capacity_ += c.cap;
    chunks_.push_back(std::move(c));
    ++growths_;
  }
  Chunk& c = chunks_[active_];
  std::pair<index_t*, double*> out{c.rows.get() + c.used, c.vals.get() + c.used};
  c.used += len;
  used_ += len;
  return out;
}

void ColumnStore::init(index_t nr, index_t nc, index_t est_nnz) {
  nrows = nr;
  ncols = nc;
  rows.assign(nc, nullptr);
  vals.assign(nc, nullptr);
  len.assign(nc, 0);
  arena.reserve(std::max<index_t>(est_nnz, 16));
}

void ColumnStore::reset() {
  std::fill(rows.begin(), rows.end(), nullptr);
  std::fill(vals.begin(), vals.end(), nullptr);
  std::fill(len.begin(), len.end(), 0);
  arena.reset();
}

void ColumnStore::push_column(index_t col, const index_t* r, const double* v,
                              index_t n) {
  auto [dr, dv] = arena.append(n);
  for (index_t k = 0; k < n; ++k) {
    dr[k] = r[k];
    dv[k] = v[k];
  }
  rows[col] = dr;
  vals[col] = dv;
  len[col] = n;
}

index_t ColumnStore::total_nnz() const {
  index_t t = 0;
  for (index_t l : len) t += l;
  return t;
}

void ColumnStore::finalize(CscMatrix& out, const index_t* row_relabel) const {
  out.nrows = nrows;
  out.ncols = ncols;
  out.col_ptr.assign(ncols + 1, 0);
  for (index_t j = 0; j < ncols; ++j) out.col_ptr[j + 1] = out.col_ptr[j] + len[j];
  const index_t nz = out.col_ptr[ncols];
  out.row_idx.resize(nz);
  out.values.resize(nz);
  std::vector<std::pair<index_t, double>> scratch;
  for (index_t j = 0; j < ncols; ++j) {
    scratch.clear();
    for (index_t k = 0; k < len[j]; ++k) {
      index_t r = rows[j][k];
      if (row_relabel) r = row_relabel[r];
      scratch.emplace_back(r, vals[j][k]);
    }
    std::sort(scratch.begin(), scratch.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    index_t q = out.col_ptr[j];
    for (const auto& [r, v] : scratch) {
      out.row_idx[q] = r;
      out.values[q] = v;
      ++q;
    }
  }
}

void ColumnStore::relabel_rows(const index_t* map) {
  for (index_t j = 0; j < ncols; ++j) {
    index_t* r = const_cast<index_t*>(rows[j]);
    for (index_t k = 0; k < len[j]; ++k) r[k] = map[r[k]];
  }
}

void SparseAccumulator::init(index_t n) {
  val.assign(n, 0.0);
  mark.assign(n, -1);
  pattern.clear();
  pattern.reserve(n);
  dfs_stack.reserve(n);
  dfs_pos.reserve(n);
  generation = 0;
}

void SparseAccumulator::new_column() {
  ++generation;
  pattern.clear();
}

void reach(const ColumnStore& l, const index_t* pinv, const index_t* seeds,
           index_t nseeds, SparseAccumulator& spa, GpStats& st) {
  auto& stack = spa.dfs_stack;
  auto& pos = spa.dfs_pos;
  for (index_t s = 0; s < nseeds; ++s) {
    const index_t seed = seeds[s];
    if (spa.mark[seed] == spa.generation) continue;
    spa.mark[seed] = spa.generation;
    stack.clear();
    pos.clear();
    stack.push_back(seed);
    pos.push_back(0);
    while (!stack.empty()) {
      const index_t j = stack.back();
      const index_t t = pinv[j];
      bool descended = false;
      if (t >= 0) {
        const index_t* child = l.rows[t];
        const index_t deg = l.len[t];
        for (index_t k = pos.back(); k < deg; ++k) {
          const index_t c = child[k];
          if (spa.mark[c] == spa.generation) continue;
          spa.mark[c] = spa.generation;
          pos.back() = k + 1;
          stack.push_back(c);
          pos.push_back(0);
          descended = true;
          break;
        }
      }
      if (!descended) {
        spa.val[j] = 0.0;
        spa.pattern.push_back(j);  // postorder emit
        ++st.reach_visits;
        stack.pop_back();
        pos.pop_back();
      }
    }
  }
}

void column_solve(const ColumnStore& l, const index_t* pinv,
                  SparseAccumulator& spa, GpStats& st) {
  // Reverse postorder is a topological order: every row's dependencies are
  // finished before it is used to update others.
  for (index_t k = static_cast<index_t>(spa.pattern.size()) - 1; k >= 0; --k) {
    const index_t j = spa.pattern[k];
    const index_t t = pinv[j];
    if (t < 0) continue;
    const double xj = spa.val[j];
    if (xj == 0.0) continue;
    const index_t* r = l.rows[t];
    const double* v = l.vals[t];
    const index_t deg = l.len[t];
    for (index_t q = 0; q < deg; ++q) spa.val[r[q]] -= v[q] * xj;
    st.flops += static_cast<double>(deg);
  }
}

index_t pivot_select(const SparseAccumulator& spa, const index_t* pinv,
                     index_t diag_row, double pivot_tol, index_t column) {
  double maxv = -1.0;
  index_t argmax = -1;
  bool any_candidate = false;
  for (index_t j : spa.pattern) {
    if (pinv[j] >= 0) continue;
    any_candidate = true;
    const double v = std::fabs(spa.val[j]);
    if (v > maxv || (v == maxv && j < argmax)) {
      maxv = v;
      argmax = j;
    }
  }
  if (!any_candidate)
    throw SingularError(column, "no pivot candidate in column " +
                                    std::to_string(column));
  if (maxv == 0.0)
    throw SingularError(column, "column " + std::to_string(column) +
                                    " is numerically zero");
  if (diag_row >= 0 && spa.mark[diag_row] == spa.generation &&
      pinv[diag_row] < 0) {
    const double dv = std::fabs(spa.val[diag_row]);
    if (dv != 0.0 && dv >= pivot_tol * maxv) return diag_row;
  }
  return argmax;
}

void axpy_columns(const ColumnStore& store, const index_t* ucols,
                  const double* uvals, index_t count, SparseAccumulator& spa,
                  GpStats& st, double scale) {
  for (index_t k = 0; k < count; ++k) {
    const index_t t = ucols[k];
    const double uv = scale * uvals[k];
    const index_t* r = store.rows[t];
    const double* v = store.vals[t];
    const index_t deg = store.len[t];
    for (index_t q = 0; q < deg; ++q) {
      spa.touch(r[q]);
      spa.val[r[q]] += v[q] * uv;
    }
    st.flops += static_cast<double>(deg);
  }
}

void DiagGpState::init(index_t n, index_t est_l, index_t est_u) {
  if (est_l <= 0) est_l = n;
  if (est_u <= 0) est_u = n;
  l.init(n, n, est_l);
  u.init(n, n, est_u);
  pinv.assign(n, -1);
  piv.assign(n, -1);
  stats = GpStats{};
}

void DiagGpState::reset() {
  l.reset();
  u.reset();
  std::fill(pinv.begin(), pinv.end(), -1);
  std::fill(piv.begin(), piv.end(), -1);
  stats = GpStats{};
}

index_t DiagGpState::step(index_t col, double pivot_tol,
                          SparseAccumulator& spa) {
  column_solve(l, pinv.data(), spa, stats);
  const index_t diag = (col < static_cast<index_t>(pinv.size()) &&
                        pinv[col] < 0)
                           ? col
                           : -1;
  const index_t prow = pivot_select(spa, pinv.data(), diag, pivot_tol, col);
  const double pv = spa.val[prow];

  // Split the pattern: pivotal rows feed U (by pivotal index), the rest are
  // scaled into L. Pattern order is deterministic, and readers that consume
  // these columns before finalize see this same order on every run.
  auto& ur = scratch_rows_u;
  auto& lr = scratch_rows_l;
  auto& uv = scratch_vals_u;
  auto& lv = scratch_vals_l;
  ur.clear();
  lr.clear();
  uv.clear();
  lv.clear();
  for (index_t j : spa.pattern) {
    const index_t t = pinv[j];
    if (t >= 0) {
      ur.push_back(t);
      uv.push_back(spa.val[j]);
    } else if (j != prow) {
      lr.push_back(j);
      lv.push_back(spa.val[j] / pv);
    }
  }
  ur.push_back(col);  // the pivot closes the U column
  uv.push_back(pv);
  u.push_column(col, ur.data(), uv.data(), static_cast<index_t>(ur.size()));
  l.push_column(col, lr.data(), lv.data(), static_cast<index_t>(lr.size()));
  stats.flops += static_cast<double>(lr.size());  // divisions
  stats.columns++;
  pinv[prow] = col;
  piv[col] = prow;
  return prow;
}

void DiagGpState::relabel_l() { l.relabel_rows(pinv.data()); }

LuBlock DiagGpState::finish() const {
  LuBlock out;
  l.finalize(out.l);
  u.finalize(out.u);
  out.pivot = Permutation::from_forward(pinv);
  return out;
}

LuBlock factor_block_gp(const CscMatrix& block, double pivot_tol,
                        GpStats& stats, index_t est_l, index_t est_u) {
  if (block.nrows != block.ncols)
    throw Error(ErrorKind::bad_input, "factor_block_gp needs a square block");
  const index_t n = block.ncols;
  if (est_l <= 0) est_l = std::max(block.nnz(), n);
  if (est_u <= 0) est_u = std::max(block.nnz(), n);
  DiagGpState dg;
  dg.init(n, est_l, est_u);
  SparseAccumulator spa;
  spa.init(n);
  for (index_t c = 0; c < n; ++c) {
    spa.new_column();
    const auto seed_rows = block.col_rows(c);
    const auto seed_vals = block.col_values(c);
    reach(dg.l, dg.pinv.data(), seed_rows.data(),
          static_cast<index_t>(seed_rows.size()), spa, dg.stats);
    for (std::size_t k = 0; k < seed_rows.size(); ++k)
      spa.val[seed_rows[k]] += seed_vals[k];
    dg.step(c, pivot_tol, spa);
  }
  dg.relabel_l();
  dg.stats.arena_growths = dg.l.arena.growths() + dg.u.arena.growths();
  stats.accumulate(dg.stats);
  return dg.finish();
}

}  // namespace hblu
