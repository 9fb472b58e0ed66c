#include "hblu/ordering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <utility>

namespace hblu {
namespace {

constexpr index_t kInf = std::numeric_limits<index_t>::max();

// Hopcroft-Karp maximum bipartite matching. Adjacency is CSR over the left
// side (ap has nl+1 entries, ai holds right vertices). matchl/matchr are
// resized and filled with the partner index or -1. Returns the matching size.
// Deterministic for a fixed adjacency order.
index_t hopcroft_karp(index_t nl, index_t nr, const std::vector<index_t>& ap,
                      const std::vector<index_t>& ai,
                      std::vector<index_t>& matchl,
                      std::vector<index_t>& matchr) {
  matchl.assign(nl, -1);
  matchr.assign(nr, -1);
  std::vector<index_t> dist(nl), queue(nl), it(nl);
  std::vector<index_t> stack, redge;
  index_t matched = 0;
  for (;;) {
    // BFS builds the layered graph from unmatched left vertices.
    index_t qh = 0, qt = 0;
    for (index_t l = 0; l < nl; ++l) {
      if (matchl[l] == -1) {
        dist[l] = 0;
        queue[qt++] = l;
      } else {
        dist[l] = kInf;
      }
    }
    bool reachable = false;
    while (qh < qt) {
      const index_t l = queue[qh++];
      for (index_t k = ap[l]; k < ap[l + 1]; ++k) {
        const index_t l2 = matchr[ai[k]];
        if (l2 == -1) {
          reachable = true;
        } else if (dist[l2] == kInf) {
          dist[l2] = dist[l] + 1;
          queue[qt++] = l2;
        }
      }
    }
    if (!reachable) break;
    // DFS phase: vertex-disjoint augmenting paths along the layers.
    for (index_t l = 0; l < nl; ++l) it[l] = ap[l];
    for (index_t l0 = 0; l0 < nl; ++l0) {
      if (matchl[l0] != -1) continue;
      stack.assign(1, l0);
      redge.assign(1, -1);
      bool augmented = false;
      while (!stack.empty() && !augmented) {
        const index_t l = stack.back();
        bool descended = false;
        while (it[l] < ap[l + 1]) {
          const index_t r = ai[it[l]++];
          const index_t l2 = matchr[r];
          if (l2 == -1) {
            redge.back() = r;
            for (std::size_t d = stack.size(); d-- > 0;) {
              matchl[stack[d]] = redge[d];
              matchr[redge[d]] = stack[d];
            }
            ++matched;
            augmented = true;
            break;
          }
          if (dist[l2] == dist[l] + 1) {
            redge.back() = r;
            stack.push_back(l2);
            redge.push_back(-1);
            descended = true;
            break;
          }
        }
        if (augmented) break;
        if (!descended) {
          dist[l] = kInf;
          stack.pop_back();
          redge.pop_back();
        }
      }
    }
  }
  return matched;
}

// Koenig alternating reachability from the unmatched left vertices: follow
// non-matching edges left to right and matching edges right to left. A
// minimum vertex cover of the bipartite graph is (L \ Z) union (R in Z).
void koenig_reach(index_t nl, const std::vector<index_t>& ap,
                  const std::vector<index_t>& ai,
                  const std::vector<index_t>& matchl,
                  const std::vector<index_t>& matchr, std::vector<char>& inzl,
                  std::vector<char>& inzr) {
  inzl.assign(nl, 0);
  inzr.assign(matchr.size(), 0);
  std::vector<index_t> queue;
  for (index_t l = 0; l < nl; ++l)
    if (matchl[l] == -1) {
      inzl[l] = 1;
      queue.push_back(l);
    }
  while (!queue.empty()) {
    const index_t l = queue.back();
    queue.pop_back();
    for (index_t k = ap[l]; k < ap[l + 1]; ++k) {
      const index_t r = ai[k];
      if (r == matchl[l] || inzr[r]) continue;
      inzr[r] = 1;
      const index_t l2 = matchr[r];
      if (l2 != -1 && !inzl[l2]) {
        inzl[l2] = 1;
        queue.push_back(l2);
      }
    }
  }
}

}  // namespace

Permutation mwcm(const CscMatrix& a) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "mwcm: matrix must be square");
  const index_t n = a.nrows;
  if (n == 0) return Permutation::identity(0);

  // Columns are the left side, rows the right side. Feasibility at threshold
  // t keeps only entries with |value| >= t.
  std::vector<index_t> ap(n + 1), ai(a.row_idx.size());
  std::vector<index_t> matchl, matchr;
  auto matching_size = [&](double t) {
    index_t pos = 0;
    for (index_t j = 0; j < n; ++j) {
      ap[j] = pos;
      const auto rows = a.col_rows(j);
      const auto vals = a.col_values(j);
      for (std::size_t k = 0; k < rows.size(); ++k)
        if (std::abs(vals[k]) >= t) ai[pos++] = rows[k];
    }
    ap[n] = pos;
    return hopcroft_karp(n, n, ap, ai, matchl, matchr);
  };

  const index_t full = matching_size(-1.0);
  if (full < n)
    throw StructurallySingularError(
        full, "mwcm: structurally singular, structural rank " +
                  std::to_string(full) + " of " + std::to_string(n));

  std::vector<double> thresholds(a.values.size());
  for (std::size_t k = 0; k < a.values.size(); ++k)
    thresholds[k] = std::abs(a.values[k]);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  // Largest threshold that still admits a perfect matching. The lowest
  // threshold keeps every entry, so it is feasible by the check above.
  index_t lo = 0, hi = static_cast<index_t>(thresholds.size()) - 1;
  while (lo < hi) {
    const index_t mid = lo + (hi - lo + 1) / 2;
    if (matching_size(thresholds[mid]) == n)
      lo = mid;
    else
      hi = mid - 1;
  }
  const double bottleneck = thresholds[lo];

  // Prefer the identity when it already achieves the optimal bottleneck.
  bool identity_ok = true;
  for (index_t j = 0; j < n && identity_ok; ++j) {
    const auto rows = a.col_rows(j);
    const auto vals = a.col_values(j);
    const auto pos = std::lower_bound(rows.begin(), rows.end(), j);
    identity_ok = pos != rows.end() && *pos == j &&
                  std::abs(vals[pos - rows.begin()]) >= bottleneck;
  }
  if (identity_ok) return Permutation::identity(n);

  matching_size(bottleneck);  // rebuild matchl at the optimum
  std::vector<index_t> fwd(n);
  for (index_t j = 0; j < n; ++j) fwd[matchl[j]] = j;
  return Permutation::from_forward(std::move(fwd));
}

BtfResult btf_scc(const CscMatrix& a) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "btf_scc: matrix must be square");
  const index_t n = a.nrows;

  // Iterative Tarjan on the graph with an edge j -> i per entry a(i,j). A
  // component is complete only after everything it can reach is complete, so
  // emitting components in completion order puts every entry's row block at
  // or before its column block: block upper triangular.
  std::vector<index_t> disc(n, -1), low(n, 0);
  std::vector<char> onstk(n, 0);
  std::vector<index_t> sccstk;
  struct Frame {
    index_t v;
    index_t k;  // next edge position in row_idx
  };
  std::vector<Frame> frames;
  std::vector<index_t> new_order;
  new_order.reserve(n);
  std::vector<index_t> block_ptr(1, 0);
  index_t timer = 0;

  for (index_t root = 0; root < n; ++root) {
    if (disc[root] != -1) continue;
    disc[root] = low[root] = timer++;
    onstk[root] = 1;
    sccstk.push_back(root);
    frames.push_back({root, a.col_ptr[root]});
    while (!frames.empty()) {
      Frame& f = frames.back();
      const index_t v = f.v;
      bool descended = false;
      while (f.k < a.col_ptr[v + 1]) {
        const index_t w = a.row_idx[f.k++];
        if (w == v) continue;
        if (disc[w] == -1) {
          disc[w] = low[w] = timer++;
          onstk[w] = 1;
          sccstk.push_back(w);
          frames.push_back({w, a.col_ptr[w]});
          descended = true;
          break;
        }
        if (onstk[w]) low[v] = std::min(low[v], disc[w]);
      }
      if (descended) continue;
      if (low[v] == disc[v]) {
        const std::size_t first = new_order.size();
        index_t u;
        do {
          u = sccstk.back();
          sccstk.pop_back();
          onstk[u] = 0;
          new_order.push_back(u);
        } while (u != v);
        std::sort(new_order.begin() + first, new_order.end());
        block_ptr.push_back(static_cast<index_t>(new_order.size()));
      }
      frames.pop_back();
      if (!frames.empty())
        low[frames.back().v] = std::min(low[frames.back().v], low[v]);
    }
  }

  BtfResult r;
  std::vector<index_t> fwd(n);
  for (index_t k = 0; k < n; ++k) fwd[new_order[k]] = k;
  r.perm = Permutation::from_forward(std::move(fwd));
  r.block_ptr = std::move(block_ptr);
  return r;
}

Permutation amd_order(const CscMatrix& a) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "amd_order: matrix must be square");
  const index_t n = a.nrows;
  if (n == 0) return Permutation::identity(0);
  const CscMatrix s = symmetrized_pattern(a);

  // Quotient graph. Each node is a supervariable or an element (an
  // eliminated pivot standing for the clique on its variable list). A
  // variable's list holds elen elements followed by len-elen variables;
  // an element's list holds its variables.
  enum : char { kVar, kElem, kDeadVar, kDeadElem };
  std::vector<char> kind(n, kVar);
  std::vector<index_t> pe(n), len(n), elen(n, 0), nv(n, 1), degree(n);
  std::vector<index_t> wval(n, 0), estamp(n, 0), vstamp(n, 0), cstamp(n, 0);
  std::vector<index_t> merged_into(n, -1);

  index_t iwlen = s.nnz() + 2 * n + 16;
  std::vector<index_t> iw(iwlen);
  for (index_t j = 0; j < n; ++j) {
    pe[j] = s.col_ptr[j];
    len[j] = s.col_ptr[j + 1] - s.col_ptr[j];
    degree[j] = len[j];
  }
  std::copy(s.row_idx.begin(), s.row_idx.end(), iw.begin());
  index_t pfree = s.nnz();

  // Degree buckets, doubly linked; head insertion.
  std::vector<index_t> head(n + 1, -1), nxt(n, -1), prv(n, -1);
  auto bucket_insert = [&](index_t i, index_t d) {
    nxt[i] = head[d];
    prv[i] = -1;
    if (head[d] != -1) prv[head[d]] = i;
    head[d] = i;
  };
  auto bucket_remove = [&](index_t i, index_t d) {
    if (prv[i] != -1)
      nxt[prv[i]] = nxt[i];
    else
      head[d] = nxt[i];
    if (nxt[i] != -1) prv[nxt[i]] = prv[i];
  };
  for (index_t i = 0; i < n; ++i) bucket_insert(i, degree[i]);

  auto garbage_collect = [&]() {
    std::vector<std::pair<index_t, index_t>> live;
    for (index_t x = 0; x < n; ++x) {
      const bool alive = (kind[x] == kVar && nv[x] > 0) || kind[x] == kElem;
      if (alive && len[x] > 0) live.emplace_back(pe[x], x);
    }
    std::sort(live.begin(), live.end());
    index_t dst = 0;
    for (auto [src, x] : live) {
      for (index_t k = 0; k < len[x]; ++k) iw[dst + k] = iw[src + k];
      pe[x] = dst;
      dst += len[x];
    }
    pfree = dst;
  };

  std::vector<index_t> elim_order;
  elim_order.reserve(n);
  std::vector<index_t> lp, mass_elim, scratch;
  std::vector<std::pair<index_t, index_t>> hashes;
  index_t elimmass = 0, mindeg = 0, round = 0, cmark = 0;

  while (elimmass < n) {
    while (head[mindeg] == -1) ++mindeg;
    const index_t p = head[mindeg];
    bucket_remove(p, mindeg);
    ++round;

    // Gather Lp: live variables adjacent to p directly or through one of
    // p's elements. Those elements are absorbed into the new element p.
    lp.clear();
    vstamp[p] = round;
    for (index_t k = pe[p]; k < pe[p] + elen[p]; ++k) {
      const index_t e = iw[k];
      if (kind[e] != kElem) continue;
      for (index_t k2 = pe[e]; k2 < pe[e] + len[e]; ++k2) {
        const index_t i = iw[k2];
        if (kind[i] == kVar && nv[i] > 0 && vstamp[i] != round) {
          vstamp[i] = round;
          lp.push_back(i);
        }
      }
      kind[e] = kDeadElem;
    }
    for (index_t k = pe[p] + elen[p]; k < pe[p] + len[p]; ++k) {
      const index_t i = iw[k];
      if (kind[i] == kVar && nv[i] > 0 && vstamp[i] != round) {
        vstamp[i] = round;
        lp.push_back(i);
      }
    }
    for (index_t i : lp) bucket_remove(i, degree[i]);

    // Turn p into an element over Lp.
    len[p] = 0;
    elen[p] = 0;
    const index_t lpn = static_cast<index_t>(lp.size());
    if (pfree + lpn > iwlen) garbage_collect();
    pe[p] = pfree;
    for (index_t i : lp) iw[pfree++] = i;
    len[p] = lpn;
    kind[p] = kElem;
    index_t lpmass = 0;
    for (index_t i : lp) lpmass += nv[i];
    degree[p] = lpmass;
    index_t nvpiv = nv[p];

    // Pass 1: wval[e] becomes the mass of e's variables outside Lp
    // (an upper bound once supervariable masses have drifted).
    for (index_t i : lp)
      for (index_t k = pe[i]; k < pe[i] + elen[i]; ++k) {
        const index_t e = iw[k];
        if (kind[e] != kElem || e == p) continue;
        if (estamp[e] != round) {
          estamp[e] = round;
          wval[e] = degree[e];
        }
        wval[e] -= nv[i];
      }

    // Pass 2: rebuild each Lp member's list in place (drop dead entries,
    // drop Lp variables now covered by p, append p) and bound its degree.
    mass_elim.clear();
    hashes.clear();
    for (index_t i : lp) {
      index_t wpos = pe[i];
      index_t esum = 0, hash = 0;
      for (index_t k = pe[i]; k < pe[i] + elen[i]; ++k) {
        const index_t e = iw[k];
        if (kind[e] != kElem || e == p) continue;
        const index_t outside = estamp[e] == round ? wval[e] : degree[e];
        if (outside <= 0) {
          kind[e] = kDeadElem;  // entirely inside Lp: absorbed by p
          continue;
        }
        iw[wpos++] = e;
        esum += outside;
        hash += e;
      }
      // Surviving variables are staged first: appending p in place before
      // the variable part has been read would clobber its first slot.
      scratch.clear();
      index_t vsum = 0;
      for (index_t k = pe[i] + elen[i]; k < pe[i] + len[i]; ++k) {
        const index_t v = iw[k];
        if (kind[v] != kVar || nv[v] <= 0 || vstamp[v] == round) continue;
        scratch.push_back(v);
        vsum += nv[v];
        hash += v;
      }
      const index_t new_elen = wpos - pe[i] + 1;
      iw[wpos++] = p;
      hash += p;
      for (index_t v : scratch) iw[wpos++] = v;
      len[i] = wpos - pe[i];
      elen[i] = new_elen;
      const index_t d = lpmass - nv[i] + esum + vsum;
      if (d == 0) {
        mass_elim.push_back(i);  // adjacent only to Lp: eliminate with p
      } else {
        const index_t live_other = n - elimmass - nvpiv - nv[i];
        degree[i] =
            std::min({d, degree[i] + lpmass - nv[i], live_other});
        hashes.emplace_back(hash, i);
      }
    }
    for (index_t i : mass_elim) {
      merged_into[i] = p;
      kind[i] = kDeadVar;
      nvpiv += nv[i];
      degree[p] -= nv[i];
      lpmass -= nv[i];
      nv[i] = 0;
      len[i] = 0;
    }

    // Supervariable detection: members of Lp with identical lists merge.
    std::sort(hashes.begin(), hashes.end());
    for (std::size_t g = 0; g < hashes.size(); ++g) {
      const index_t i = hashes[g].second;
      if (nv[i] <= 0) continue;
      bool stamped = false;
      for (std::size_t h = g + 1;
           h < hashes.size() && hashes[h].first == hashes[g].first; ++h) {
        const index_t j = hashes[h].second;
        if (nv[j] <= 0 || len[j] != len[i] || elen[j] != elen[i]) continue;
        if (!stamped) {
          ++cmark;
          for (index_t k = pe[i]; k < pe[i] + len[i]; ++k) cstamp[iw[k]] = cmark;
          stamped = true;
        }
        bool equal = true;
        for (index_t k = pe[j]; k < pe[j] + len[j] && equal; ++k)
          equal = cstamp[iw[k]] == cmark;
        if (!equal) continue;
        nv[i] += nv[j];
        nv[j] = 0;
        kind[j] = kDeadVar;
        merged_into[j] = i;
        len[j] = 0;
      }
    }

    for (const auto& [hash, i] : hashes) {
      (void)hash;
      if (nv[i] <= 0) continue;
      bucket_insert(i, degree[i]);
      mindeg = std::min(mindeg, degree[i]);
    }

    nv[p] = nvpiv;
    elimmass += nvpiv;
    elim_order.push_back(p);
    if (degree[p] == 0) kind[p] = kDeadElem;
  }

  // Expand supervariables: vertices take consecutive positions at the
  // elimination step of the pivot that absorbed them, ascending original
  // index within a step.
  std::vector<index_t> rank(n, -1);
  for (std::size_t k = 0; k < elim_order.size(); ++k)
    rank[elim_order[k]] = static_cast<index_t>(k);
  std::vector<index_t> count(elim_order.size(), 0), root(n);
  for (index_t v = 0; v < n; ++v) {
    index_t r = v;
    while (merged_into[r] != -1) r = merged_into[r];
    root[v] = r;
    ++count[rank[r]];
  }
  std::vector<index_t> offset(elim_order.size() + 1, 0);
  for (std::size_t k = 0; k < elim_order.size(); ++k)
    offset[k + 1] = offset[k] + count[k];
  std::vector<index_t> fwd(n);
  for (index_t v = 0; v < n; ++v) fwd[v] = offset[rank[root[v]]]++;
  return Permutation::from_forward(std::move(fwd));
}

namespace {

// Shared state for one nested dissection run over the symmetric pattern s.
struct NdBuilder {
  const CscMatrix& s;
  std::vector<index_t> order;  // original ids in final column order
  std::vector<NdNode> nodes;
  std::vector<index_t> leaves;
  std::vector<index_t> glob2loc;

  explicit NdBuilder(const CscMatrix& sym) : s(sym), glob2loc(sym.nrows, -1) {}

  // Local CSR adjacency of the induced subgraph on verts (sorted ascending).
  void local_adjacency(const std::vector<index_t>& verts,
                       std::vector<index_t>& xadj,
                       std::vector<index_t>& adj) {
    const index_t nv = static_cast<index_t>(verts.size());
    for (index_t l = 0; l < nv; ++l) glob2loc[verts[l]] = l;
    xadj.assign(nv + 1, 0);
    for (index_t l = 0; l < nv; ++l)
      for (index_t g : s.col_rows(verts[l]))
        if (glob2loc[g] != -1) ++xadj[l + 1];
    for (index_t l = 0; l < nv; ++l) xadj[l + 1] += xadj[l];
    adj.resize(xadj[nv]);
    std::vector<index_t> pos(xadj.begin(), xadj.end() - 1);
    for (index_t l = 0; l < nv; ++l)
      for (index_t g : s.col_rows(verts[l]))
        if (glob2loc[g] != -1) adj[pos[l]++] = glob2loc[g];
    for (index_t l = 0; l < nv; ++l) glob2loc[verts[l]] = -1;
  }

  // Splits verts into (va, vb, vsep) with no edge between va and vb.
  void partition(const std::vector<index_t>& verts, std::vector<index_t>& va,
                 std::vector<index_t>& vb, std::vector<index_t>& vsep) {
    va.clear();
    vb.clear();
    vsep.clear();
    const index_t nv = static_cast<index_t>(verts.size());
    if (nv == 0) return;
    if (nv == 1) {
      va = verts;
      return;
    }
    std::vector<index_t> xadj, adj;
    local_adjacency(verts, xadj, adj);

    // Connected components, discovered in ascending local id order.
    std::vector<index_t> comp(nv, -1), queue;
    std::vector<index_t> comp_size;
    for (index_t l0 = 0; l0 < nv; ++l0) {
      if (comp[l0] != -1) continue;
      const index_t c = static_cast<index_t>(comp_size.size());
      comp_size.push_back(0);
      queue.assign(1, l0);
      comp[l0] = c;
      while (!queue.empty()) {
        const index_t l = queue.back();
        queue.pop_back();
        ++comp_size[c];
        for (index_t k = xadj[l]; k < xadj[l + 1]; ++k)
          if (comp[adj[k]] == -1) {
            comp[adj[k]] = c;
            queue.push_back(adj[k]);
          }
      }
    }
    const index_t ncomp = static_cast<index_t>(comp_size.size());
    if (ncomp > 1) {
      // Whole components go to the lighter side; the separator is empty.
      std::vector<index_t> comps(ncomp);
      for (index_t c = 0; c < ncomp; ++c) comps[c] = c;
      std::sort(comps.begin(), comps.end(), [&](index_t x, index_t y) {
        return comp_size[x] != comp_size[y] ? comp_size[x] > comp_size[y]
                                            : x < y;
      });
      std::vector<char> to_b(ncomp, 0);
      index_t wa = 0, wb = 0;
      for (index_t c : comps) {
        if (wa <= wb)
          wa += comp_size[c];
        else {
          to_b[c] = 1;
          wb += comp_size[c];
        }
      }
      for (index_t l = 0; l < nv; ++l)
        (to_b[comp[l]] ? vb : va).push_back(verts[l]);
      return;
    }

    // Single component: grow a breadth-first half from a pseudo-peripheral
    // vertex, then cover the frontier edges with a minimum vertex cover.
    auto bfs_layers = [&](index_t src, std::vector<index_t>& order_out,
                          std::vector<index_t>& level) {
      level.assign(nv, -1);
      order_out.assign(1, src);
      level[src] = 0;
      for (std::size_t h = 0; h < order_out.size(); ++h) {
        const index_t l = order_out[h];
        for (index_t k = xadj[l]; k < xadj[l + 1]; ++k)
          if (level[adj[k]] == -1) {
            level[adj[k]] = level[l] + 1;
            order_out.push_back(adj[k]);
          }
      }
    };
    auto min_degree_vertex = [&](const std::vector<index_t>& cands) {
      index_t best = cands[0];
      for (index_t l : cands) {
        const index_t dl = xadj[l + 1] - xadj[l];
        const index_t db = xadj[best + 1] - xadj[best];
        if (dl < db || (dl == db && l < best)) best = l;
      }
      return best;
    };
    std::vector<index_t> all(nv);
    for (index_t l = 0; l < nv; ++l) all[l] = l;
    std::vector<index_t> bfs, level;
    index_t root = min_degree_vertex(all);
    bfs_layers(root, bfs, level);
    std::vector<index_t> last_layer;
    for (index_t l : bfs)
      if (level[l] == level[bfs.back()]) last_layer.push_back(l);
    root = min_degree_vertex(last_layer);
    bfs_layers(root, bfs, level);

    // side: 0 = A, 1 = B, 2 = separator. Take whole breadth-first layers
    // until the next one would overshoot half, then fill from that layer in
    // ascending local id order. bfs is already sorted by level.
    std::vector<char> side(nv, 1);
    const index_t target = std::max<index_t>(1, nv / 2);
    index_t taken = 0;
    std::size_t pos = 0;
    while (taken < target) {
      const index_t h = level[bfs[pos]];
      std::size_t end = pos;
      while (end < bfs.size() && level[bfs[end]] == h) ++end;
      const index_t layer_size = static_cast<index_t>(end - pos);
      if (taken + layer_size <= target) {
        for (std::size_t k = pos; k < end; ++k) side[bfs[k]] = 0;
        taken += layer_size;
      } else {
        std::vector<index_t> layer(bfs.begin() + pos, bfs.begin() + end);
        std::sort(layer.begin(), layer.end());
        for (index_t l : layer) {
          if (taken == target) break;
          side[l] = 0;
          ++taken;
        }
      }
      pos = end;
    }

    // Bipartite frontier graph: A-side boundary vertices against B-side
    // boundary vertices, one edge per crossing pattern entry.
    std::vector<index_t> lid(nv, -1), rid(nv, -1), lvert, rvert;
    for (index_t l = 0; l < nv; ++l) {
      if (side[l] != 0) continue;
      for (index_t k = xadj[l]; k < xadj[l + 1]; ++k)
        if (side[adj[k]] == 1) {
          if (lid[l] == -1) {
            lid[l] = static_cast<index_t>(lvert.size());
            lvert.push_back(l);
          }
          if (rid[adj[k]] == -1) {
            rid[adj[k]] = static_cast<index_t>(rvert.size());
            rvert.push_back(adj[k]);
          }
        }
    }
    const index_t nl = static_cast<index_t>(lvert.size());
    const index_t nr = static_cast<index_t>(rvert.size());
    std::vector<index_t> bap(nl + 1, 0), bai;
    for (index_t x = 0; x < nl; ++x) {
      const index_t l = lvert[x];
      bap[x] = static_cast<index_t>(bai.size());
      for (index_t k = xadj[l]; k < xadj[l + 1]; ++k)
        if (side[adj[k]] == 1) bai.push_back(rid[adj[k]]);
    }
    bap[nl] = static_cast<index_t>(bai.size());
    std::vector<index_t> matchl, matchr;
    hopcroft_karp(nl, nr, bap, bai, matchl, matchr);
    std::vector<char> inzl, inzr;
    koenig_reach(nl, bap, bai, matchl, matchr, inzl, inzr);
    for (index_t x = 0; x < nl; ++x)
      if (!inzl[x]) side[lvert[x]] = 2;
    for (index_t y = 0; y < nr; ++y)
      if (inzr[y]) side[rvert[y]] = 2;

    // A separator vertex with all neighbors on one side can join that side.
    for (index_t l = 0; l < nv; ++l) {
      if (side[l] != 2) continue;
      bool has_a = false, has_b = false;
      for (index_t k = xadj[l]; k < xadj[l + 1]; ++k) {
        has_a = has_a || side[adj[k]] == 0;
        has_b = has_b || side[adj[k]] == 1;
      }
      if (!has_a)
        side[l] = 1;
      else if (!has_b)
        side[l] = 0;
    }

    for (index_t l = 0; l < nv; ++l) {
      if (side[l] == 0)
        va.push_back(verts[l]);
      else if (side[l] == 1)
        vb.push_back(verts[l]);
      else
        vsep.push_back(verts[l]);
    }
  }

  // Orders a leaf by approximate minimum degree on its induced subgraph.
  void order_leaf(const std::vector<index_t>& verts) {
    const index_t nv = static_cast<index_t>(verts.size());
    if (nv == 0) return;
    std::vector<index_t> xadj, adj;
    local_adjacency(verts, xadj, adj);
    Triplets t;
    t.nrows = t.ncols = nv;
    for (index_t l = 0; l < nv; ++l)
      for (index_t k = xadj[l]; k < xadj[l + 1]; ++k)
        t.add(adj[k], l, 1.0);
    const Permutation perm = amd_order(csc_from_triplets(t));
    for (index_t k = 0; k < nv; ++k) order.push_back(verts[perm.inverse[k]]);
  }

  index_t build(const std::vector<index_t>& verts, index_t levels) {
    if (levels == 0) {
      NdNode node;
      node.first_col = static_cast<index_t>(order.size());
      node.ncols = static_cast<index_t>(verts.size());
      node.height = 0;
      order_leaf(verts);
      nodes.push_back(node);
      const index_t id = static_cast<index_t>(nodes.size()) - 1;
      leaves.push_back(id);
      return id;
    }
    std::vector<index_t> va, vb, vsep;
    partition(verts, va, vb, vsep);
    const index_t left = build(va, levels - 1);
    const index_t right = build(vb, levels - 1);
    NdNode node;
    node.first_col = static_cast<index_t>(order.size());
    node.ncols = static_cast<index_t>(vsep.size());
    node.left = left;
    node.right = right;
    node.height = levels;
    for (index_t g : vsep) order.push_back(g);
    nodes.push_back(node);
    const index_t id = static_cast<index_t>(nodes.size()) - 1;
    nodes[left].parent = id;
    nodes[right].parent = id;
    return id;
  }
};

}  // namespace

NdResult nd_order(const CscMatrix& a, index_t nleaves) {
  if (a.nrows != a.ncols)
    throw Error(ErrorKind::bad_input, "nd_order: matrix must be square");
  if (nleaves < 1 || (nleaves & (nleaves - 1)) != 0)
    throw Error(ErrorKind::bad_input,
                "nd_order: leaf count must be a power of two");
  const index_t n = a.nrows;
  index_t levels = 0;
  while ((index_t{1} << levels) < nleaves) ++levels;

  const CscMatrix s = symmetrized_pattern(a);
  NdBuilder b(s);
  std::vector<index_t> verts(n);
  for (index_t v = 0; v < n; ++v) verts[v] = v;
  b.build(verts, levels);

  NdResult r;
  std::vector<index_t> fwd(n);
  for (index_t k = 0; k < n; ++k) fwd[b.order[k]] = k;
  r.perm = Permutation::from_forward(std::move(fwd));
  r.tree.nodes = std::move(b.nodes);
  r.tree.leaves = std::move(b.leaves);
  return r;
}

}  // namespace hblu
