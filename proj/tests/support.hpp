#pragma once

#include <vector>

#include "bpgrid/chain_dp.hpp"
#include "bpgrid/grid.hpp"
#include "bpgrid/oracle.hpp"

namespace testsup {

using namespace bpgrid;

inline Volume make_volume(int h, int w, int l, std::vector<double> vals) {
  Volume v({h, w, l});
  REQUIRE(vals.size() == v.v.size());
  v.v = std::move(vals);
  return v;
}

inline PairwiseSpec potts(double penalty) {
  JumpParams jp;
  jp.p1_pos = jp.p1_neg = jp.p2_pos = jp.p2_neg = jp.p3 = penalty;
  return PairwiseSpec{jp, std::nullopt};
}

inline PairwiseSpec random_jump(Rng& rng) {
  JumpParams jp;
  jp.p1_pos = uniform(rng, 0, 1.5);
  jp.p1_neg = uniform(rng, 0, 1.5);
  jp.p2_pos = uniform(rng, 0, 1.5);
  jp.p2_neg = uniform(rng, 0, 1.5);
  jp.p3 = uniform(rng, 0, 1.5);
  return PairwiseSpec{jp, std::nullopt};
}

inline PairwiseSpec random_matrix(Rng& rng, int labels) {
  CompatMatrix m(labels);
  for (auto& e : m.horizontal) e = uniform(rng, 0, 1);
  for (auto& e : m.vertical) e = uniform(rng, 0, 1);
  return PairwiseSpec{m, std::nullopt};
}

inline Volume random_volume(Rng& rng, GridShape shape, double lo = -1, double hi = 1) {
  Volume v(shape);
  for (auto& e : v.v) e = uniform(rng, lo, hi);
  return v;
}

// Straightforward O(L^2)-per-step DP used as a reference for the kernel's
// linear-time truncated path. Calls eval_pairwise for every (s, t).
inline void naive_dp(const ChainView& chain, Volume& msgs, std::vector<int32_t>& argmax,
                     bool normalize) {
  int L = chain.labels();
  double* m0 = msgs.v.data() + chain.offset(0);
  std::fill(m0, m0 + L, 0.0);
  for (int i = 0; i + 1 < chain.n; ++i) {
    const double* g_i = chain.unary->v.data() + chain.offset(i);
    const double* m_i = msgs.v.data() + chain.offset(i);
    double* m_next = msgs.v.data() + chain.offset(i + 1);
    int32_t* o_next = argmax.data() + chain.offset(i + 1);
    for (int t = 0; t < L; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      int32_t bs = 0;
      for (int s = 0; s < L; ++s) {
        double v = g_i[s] + m_i[s] + eval_pairwise(*chain.pw, chain.node(i), chain.dir, s, t);
        if (v > best) {
          best = v;
          bs = s;
        }
      }
      m_next[t] = best;
      o_next[t] = bs;
    }
    if (normalize) {
      double c = *std::max_element(m_next, m_next + L);
      for (int t = 0; t < L; ++t) m_next[t] -= c;
    }
  }
}

// SmallGraph view of a 1×n chain instance for the enumeration oracle. Nodes
// follow the chain order; edge tables are filled through eval_pairwise.
inline oracle::SmallGraph chain_graph(const ChainView& chain) {
  oracle::SmallGraph g;
  g.nodes = chain.n;
  g.labels = chain.labels();
  g.unary.resize((size_t)chain.n * g.labels);
  for (int i = 0; i < chain.n; ++i)
    for (int s = 0; s < g.labels; ++s)
      g.unary[(size_t)i * g.labels + s] = chain.unary->v[chain.offset(i) + s];
  for (int i = 0; i + 1 < chain.n; ++i) {
    oracle::SmallGraph::Edge e;
    e.u = i;
    e.v = i + 1;
    e.f.resize((size_t)g.labels * g.labels);
    for (int s = 0; s < g.labels; ++s)
      for (int t = 0; t < g.labels; ++t)
        e.f[(size_t)s * g.labels + t] =
            eval_pairwise(*chain.pw, chain.node(i), chain.dir, s, t);
    g.edges.push_back(std::move(e));
  }
  return g;
}

}  // namespace testsup
