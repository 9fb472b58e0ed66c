#include "hblu/synth.hpp"

#include <algorithm>
#include <random>

namespace hblu {

CscMatrix synth_grid5(index_t k) {
  if (k < 1) throw Error(ErrorKind::bad_input, "grid size must be positive");
  const index_t n = k * k;
  Triplets t;
  t.nrows = n;
  t.ncols = n;
  for (index_t i = 0; i < k; ++i)
    for (index_t j = 0; j < k; ++j) {
      const index_t v = i * k + j;
      t.add(v, v, 4.0);
      if (i > 0) t.add(v, v - k, -1.0);
      if (i + 1 < k) t.add(v, v + k, -1.0);
      if (j > 0) t.add(v, v - 1, -1.0);
      if (j + 1 < k) t.add(v, v + 1, -1.0);
    }
  return csc_from_triplets(t);
}

namespace {

// One irreducible diagonally dominant block at offset `lo`: a directed cycle
// through all rows plus random extra entries.
void add_block(Triplets& t, index_t lo, index_t m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uval(-1.0, 1.0);
  std::uniform_int_distribution<index_t> urow(0, m - 1);
  std::vector<double> diag(m, 1.0);
  for (index_t i = 0; i < m; ++i) {
    if (m > 1) {
      const index_t j = (i + 1) % m;
      const double v = uval(rng);
      t.add(lo + i, lo + j, v);
      diag[i] += std::abs(v);
    }
    const index_t extras = m > 2 ? 2 : 0;
    for (index_t e = 0; e < extras; ++e) {
      const index_t j = urow(rng);
      if (j == i || j == (i + 1) % m) continue;
      const double v = uval(rng);
      t.add(lo + i, lo + j, v);
      diag[i] += std::abs(v);
    }
  }
  for (index_t i = 0; i < m; ++i) t.add(lo + i, lo + i, diag[i] + 1.0);
}

}  // namespace

CscMatrix synth_block_diag(index_t nblocks, index_t bsize,
                           double coupling_frac, std::uint64_t seed) {
  if (nblocks < 1 || bsize < 1)
    throw Error(ErrorKind::bad_input, "block counts must be positive");
  const index_t n = nblocks * bsize;
  std::mt19937_64 rng(seed);
  Triplets t;
  t.nrows = n;
  t.ncols = n;
  for (index_t b = 0; b < nblocks; ++b) add_block(t, b * bsize, bsize, rng);
  // Couplings strictly above the block diagonal keep the blocks recoverable.
  const index_t pairs = std::max<index_t>(
      0, static_cast<index_t>(coupling_frac * static_cast<double>(nblocks)));
  std::uniform_real_distribution<double> uval(-0.5, 0.5);
  std::uniform_int_distribution<index_t> ublk(0, nblocks - 1);
  std::uniform_int_distribution<index_t> uloc(0, bsize - 1);
  for (index_t p = 0; p < pairs; ++p) {
    const index_t b1 = ublk(rng);
    const index_t b2 = ublk(rng);
    if (b1 == b2) continue;
    const index_t br = std::min(b1, b2), bc = std::max(b1, b2);
    t.add(br * bsize + uloc(rng), bc * bsize + uloc(rng), uval(rng));
  }
  return csc_from_triplets(t);
}

CscMatrix synth_arrowhead(index_t n) {
  if (n < 1) throw Error(ErrorKind::bad_input, "size must be positive");
  Triplets t;
  t.nrows = n;
  t.ncols = n;
  for (index_t i = 0; i < n; ++i) {
    t.add(i, i, 4.0 + static_cast<double>(i % 7));
    if (i + 1 < n) {
      t.add(n - 1, i, 1.0 / static_cast<double>(i + 2));
      t.add(i, n - 1, 1.0 / static_cast<double>(i + 3));
    }
  }
  return csc_from_triplets(t);
}

CscMatrix synth_random_nonsingular(index_t n, double density,
                                   std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::bad_input, "size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uval(-1.0, 1.0);
  std::uniform_int_distribution<index_t> uidx(0, n - 1);
  Triplets t;
  t.nrows = n;
  t.ncols = n;
  std::vector<double> diag(n, 0.0);
  const auto target = static_cast<index_t>(density * static_cast<double>(n) *
                                           static_cast<double>(n));
  for (index_t e = 0; e < target; ++e) {
    const index_t i = uidx(rng);
    const index_t j = uidx(rng);
    if (i == j) continue;
    const double v = uval(rng);
    t.add(i, j, v);
    diag[i] += std::abs(v);
  }
  for (index_t i = 0; i < n; ++i) t.add(i, i, diag[i] + 1.0);
  return csc_from_triplets(t);
}

}  // namespace hblu
