#include "hblu/blocked.hpp"

#include <algorithm>

namespace hblu {

namespace {

void check_offsets(const std::vector<index_t>& off, index_t extent,
                   const char* what) {
  if (off.size() < 2 || off.front() != 0 || off.back() != extent)
    throw Error(ErrorKind::bad_input,
                std::string(what) + " offsets must run from 0 to the extent");
  for (std::size_t k = 1; k < off.size(); ++k)
    if (off[k] < off[k - 1])
      throw Error(ErrorKind::bad_input,
                  std::string(what) + " offsets must be nondecreasing");
}

// block_of[i] = index of the half-open offset interval containing i.
std::vector<index_t> interval_map(const std::vector<index_t>& off) {
  std::vector<index_t> map(off.back());
  for (std::size_t b = 0; b + 1 < off.size(); ++b)
    for (index_t i = off[b]; i < off[b + 1]; ++i)
      map[i] = static_cast<index_t>(b);
  return map;
}

}  // namespace

const BlockedMatrix::Block* BlockedMatrix::find(index_t br, index_t bc) const {
  for (index_t k : col_index[bc])
    if (blocks[k].brow == br) return &blocks[k];
  return nullptr;
}

BlockedMatrix::Block* BlockedMatrix::find(index_t br, index_t bc) {
  for (index_t k : col_index[bc])
    if (blocks[k].brow == br) return &blocks[k];
  return nullptr;
}

BlockedMatrix extract_blocks(const CscMatrix& a,
                             const std::vector<index_t>& row_offsets,
                             const std::vector<index_t>& col_offsets) {
  check_offsets(row_offsets, a.nrows, "row");
  check_offsets(col_offsets, a.ncols, "column");

  BlockedMatrix bm;
  bm.row_offsets = row_offsets;
  bm.col_offsets = col_offsets;
  const index_t nbr = bm.nbrows();
  const index_t nbc = bm.nbcols();
  bm.col_index.resize(nbc);

  std::vector<index_t> row_block = interval_map(row_offsets);
  std::vector<index_t> col_block = interval_map(col_offsets);

  // Pass 1: discover present blocks (first-seen order) and count entries per
  // block. mark/slot are keyed by block row and tagged with the block column.
  std::vector<index_t> mark(nbr, -1);
  std::vector<index_t> slot(nbr, -1);
  std::vector<index_t> counts;  // entries per block
  for (index_t j = 0; j < a.ncols; ++j) {
    const index_t bc = col_block[j];
    for (index_t i : a.col_rows(j)) {
      const index_t br = row_block[i];
      if (mark[br] != bc) {
        // New (br, bc) pair or first touch in this block column; look it up in
        // the already known slots for bc.
        index_t s = -1;
        for (index_t k : bm.col_index[bc])
          if (bm.blocks[k].brow == br) {
            s = k;
            break;
          }
        if (s < 0) {
          s = static_cast<index_t>(bm.blocks.size());
          BlockedMatrix::Block b;
          b.brow = br;
          b.bcol = bc;
          b.m.nrows = row_offsets[br + 1] - row_offsets[br];
          b.m.ncols = col_offsets[bc + 1] - col_offsets[bc];
          b.m.col_ptr.assign(b.m.ncols + 1, 0);
          bm.blocks.push_back(std::move(b));
          bm.col_index[bc].push_back(s);
          counts.push_back(0);
        }
        mark[br] = bc;
        slot[br] = s;
      }
      const index_t s = slot[br];
      counts[s]++;
      bm.blocks[s].m.col_ptr[j - col_offsets[bc] + 1]++;
    }
  }

  for (auto& b : bm.blocks) {
    for (index_t c = 0; c < b.m.ncols; ++c) b.m.col_ptr[c + 1] += b.m.col_ptr[c];
    b.m.row_idx.resize(b.m.col_ptr[b.m.ncols]);
    b.m.values.resize(b.m.col_ptr[b.m.ncols]);
    b.src.resize(b.m.col_ptr[b.m.ncols]);
  }

  // Pass 2: fill. Entries arrive ordered by (column, row) globally, which is
  // also (local column, local row) order within every block, so one monotone
  // write cursor per block suffices.
  std::vector<index_t> cursor(bm.blocks.size(), 0);
  for (index_t bc = 0; bc < nbc; ++bc) {
    for (index_t k : bm.col_index[bc]) slot[bm.blocks[k].brow] = k;
    for (index_t j = col_offsets[bc]; j < col_offsets[bc + 1]; ++j) {
      for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) {
        const index_t i = a.row_idx[p];
        const index_t s = slot[row_block[i]];
        auto& b = bm.blocks[s];
        const index_t q = cursor[s]++;
        b.m.row_idx[q] = i - row_offsets[b.brow];
        b.m.values[q] = a.values[p];
        b.src[q] = p;
      }
    }
  }

  for (auto& list : bm.col_index)
    std::sort(list.begin(), list.end(), [&](index_t x, index_t y) {
      return bm.blocks[x].brow < bm.blocks[y].brow;
    });
  return bm;
}

void refresh_block_values(BlockedMatrix& bm, const CscMatrix& a) {
  for (auto& b : bm.blocks)
    for (std::size_t k = 0; k < b.src.size(); ++k)
      b.m.values[k] = a.values[b.src[k]];
}

}  // namespace hblu
