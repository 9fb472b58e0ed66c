#pragma once

#include "hblu/csc.hpp"

namespace hblu {

// A matrix partitioned by row and column offset vectors. Only structurally
// nonempty blocks are materialized; each holds a CSC with block-local indices
// plus a map back to the source entry positions so values can be refreshed
// when a same-pattern matrix arrives.
struct BlockedMatrix {
  struct Block {
    index_t brow = 0;
    index_t bcol = 0;
    CscMatrix m;
    std::vector<index_t> src;  // src[k] = position of entry k in the source CSC
  };

  std::vector<index_t> row_offsets;  // size nbrows()+1
  std::vector<index_t> col_offsets;  // size nbcols()+1
  std::vector<Block> blocks;
  // col_index[bc] lists indices into blocks for block column bc, ascending brow.
  std::vector<std::vector<index_t>> col_index;

  index_t nbrows() const { return static_cast<index_t>(row_offsets.size()) - 1; }
  index_t nbcols() const { return static_cast<index_t>(col_offsets.size()) - 1; }

  index_t block_rows(index_t br) const {
    return row_offsets[br + 1] - row_offsets[br];
  }
  index_t block_cols(index_t bc) const {
    return col_offsets[bc + 1] - col_offsets[bc];
  }

  // nullptr when the block is structurally empty.
  const Block* find(index_t br, index_t bc) const;
  Block* find(index_t br, index_t bc);
};

// Offsets must start at 0, end at nrows/ncols, and be nondecreasing.
BlockedMatrix extract_blocks(const CscMatrix& a,
                             const std::vector<index_t>& row_offsets,
                             const std::vector<index_t>& col_offsets);

// Copies values from a same-pattern source matrix through the src maps.
void refresh_block_values(BlockedMatrix& bm, const CscMatrix& a);

}  // namespace hblu
