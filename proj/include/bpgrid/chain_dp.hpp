#pragma once

#include <cstring>
#include <limits>
#include <vector>

#include "bpgrid/core.hpp"
#include "bpgrid/grid.hpp"

namespace bpgrid {

// One row or column of the grid, ordered in message direction. Node i reads
// its unary from `unary` at offset(i); the edge (i, i+1) is evaluated with
// node i as the sender.
struct ChainView {
  const Volume* unary = nullptr;
  const PairwiseSpec* pw = nullptr;
  int y0 = 0, x0 = 0;
  int dy = 0, dx = 0;
  int n = 0;
  Dir dir = Dir::right;

  int labels() const { return unary->shape.labels; }
  Pixel node(int i) const { return {y0 + i * dy, x0 + i * dx}; }
  int offset(int i) const {
    Pixel p = node(i);
    return (p.y * unary->shape.width + p.x) * unary->shape.labels;
  }
};

inline ChainView row_chain(const Volume& unary, const PairwiseSpec& pw, int y, Dir dir) {
  assert(dir == Dir::right || dir == Dir::left);
  ChainView c;
  c.unary = &unary;
  c.pw = &pw;
  c.y0 = y;
  c.x0 = dir == Dir::right ? 0 : unary.shape.width - 1;
  c.dx = dir == Dir::right ? 1 : -1;
  c.n = unary.shape.width;
  c.dir = dir;
  return c;
}

inline ChainView col_chain(const Volume& unary, const PairwiseSpec& pw, int x, Dir dir) {
  assert(dir == Dir::down || dir == Dir::up);
  ChainView c;
  c.unary = &unary;
  c.pw = &pw;
  c.x0 = x;
  c.y0 = dir == Dir::down ? 0 : unary.shape.height - 1;
  c.dy = dir == Dir::down ? 1 : -1;
  c.n = unary.shape.height;
  c.dir = dir;
  return c;
}

// Redistribution coefficients for rDP, one per chain node, each in [0, 1].
struct RedistCoeffs {
  std::vector<double> r;

  // Paper-default split: interior nodes pass on half, chain ends keep all.
  static RedistCoeffs standard(int n) {
    RedistCoeffs c;
    c.r.assign(n, 0.5);
    if (n > 0) c.r.front() = 1.0;
    if (n > 0) c.r.back() = 1.0;
    return c;
  }
};

namespace detail {

// max_s(h(s) + f(s, t)) for one DP step of a truncated-jump edge, all t at
// once. Exact O(L): offsets -2..+2 are enumerated, the two |t-s| >= 3 tails
// are covered by prefix/suffix maxima of h, so arbitrary penalty values give
// the same result as the O(L^2) scan. Candidates are visited in increasing s
// so ties resolve to the smallest label.
inline void jump_step(const double* h, int L, double pen1p, double pen1n, double pen2p,
                      double pen2n, double pen3, double* out, int32_t* arg,
                      std::vector<double>& pre, std::vector<int32_t>& pre_arg,
                      std::vector<double>& suf, std::vector<int32_t>& suf_arg) {
  pre.resize(L);
  pre_arg.resize(L);
  suf.resize(L);
  suf_arg.resize(L);
  pre[0] = h[0];
  pre_arg[0] = 0;
  for (int s = 1; s < L; ++s) {
    if (h[s] > pre[s - 1]) {
      pre[s] = h[s];
      pre_arg[s] = s;
    } else {
      pre[s] = pre[s - 1];
      pre_arg[s] = pre_arg[s - 1];
    }
  }
  suf[L - 1] = h[L - 1];
  suf_arg[L - 1] = L - 1;
  for (int s = L - 2; s >= 0; --s) {
    if (h[s] >= suf[s + 1]) {
      suf[s] = h[s];
      suf_arg[s] = s;
    } else {
      suf[s] = suf[s + 1];
      suf_arg[s] = suf_arg[s + 1];
    }
  }
  for (int t = 0; t < L; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    int32_t best_s = 0;
    auto consider = [&](int s, double val) {
      if (val > best) {
        best = val;
        best_s = (int32_t)s;
      }
    };
    if (t - 3 >= 0) consider(pre_arg[t - 3], pre[t - 3] + pen3);
    if (t - 2 >= 0) consider(t - 2, h[t - 2] + pen2p);
    if (t - 1 >= 0) consider(t - 1, h[t - 1] + pen1p);
    consider(t, h[t]);
    if (t + 1 < L) consider(t + 1, h[t + 1] + pen1n);
    if (t + 2 < L) consider(t + 2, h[t + 2] + pen2n);
    if (t + 3 < L) consider(suf_arg[t + 3], suf[t + 3] + pen3);
    out[t] = best;
    arg[t] = best_s;
  }
}

// O(L^2) step for the full matrix model. mat points at the direction's base
// matrix; (srow, scol) encode the transpose rule.
inline void matrix_step(const double* h, int L, const double* mat, int srow, int scol,
                        double ew, double* out, int32_t* arg) {
  for (int t = 0; t < L; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    int32_t best_s = 0;
    for (int s = 0; s < L; ++s) {
      double val = h[s] + ew * mat[s * srow + t * scol];
      if (val > best) {
        best = val;
        best_s = (int32_t)s;
      }
    }
    out[t] = best;
    arg[t] = best_s;
  }
}

inline void matrix_strides(Dir dir, const CompatMatrix& m, const double*& mat, int& srow,
                           int& scol) {
  switch (dir) {
    case Dir::right: mat = m.horizontal.data(); srow = m.labels; scol = 1; break;
    case Dir::left: mat = m.horizontal.data(); srow = 1; scol = m.labels; break;
    case Dir::down: mat = m.vertical.data(); srow = m.labels; scol = 1; break;
    case Dir::up: mat = m.vertical.data(); srow = 1; scol = m.labels; break;
  }
}

// Sweep-local penalties for the edge leaving `pixel` in `dir`. Sweeps against
// the canonical edge orientation see the positive and negative steps swapped
// (same transposition as the matrix model).
struct SweepPenalties {
  double p1p, p1n, p2p, p2n, p3;
};

inline SweepPenalties jump_penalties(const PairwiseSpec& spec, Pixel pixel, Dir dir) {
  const JumpParams& jp = spec.jump();
  double w = jp.weight(pixel, dir);
  double ew = spec.edge_weight(pixel, dir);
  bool canonical = dir == Dir::right || dir == Dir::down;
  SweepPenalties p;
  p.p1p = -w * (canonical ? jp.p1_pos : jp.p1_neg) * ew;
  p.p1n = -w * (canonical ? jp.p1_neg : jp.p1_pos) * ew;
  p.p2p = -w * (canonical ? jp.p2_pos : jp.p2_neg) * ew;
  p.p2n = -w * (canonical ? jp.p2_neg : jp.p2_pos) * ew;
  p.p3 = -w * jp.p3 * ew;
  return p;
}

}  // namespace detail

// Forward DP along a chain (max-product in the log domain):
//   m_0 = 0,  m_{i+1}(t) = max_s(g_i(s) + m_i(s) + f_{i,i+1}(s, t)),
// recording for every t the smallest maximizing s. Messages and argmaxes are
// written at the chain's grid offsets in `msgs` / `argmax`. With `normalize`
// the per-node max over labels is subtracted after each step; the constants
// cancel in the belief readout and are discarded.
inline void dp_forward(const ChainView& chain, Volume& msgs, std::vector<int32_t>& argmax,
                       bool normalize = true) {
  int L = chain.labels();
  int n = chain.n;
  double* m0 = msgs.v.data() + chain.offset(0);
  std::fill(m0, m0 + L, 0.0);
  if (n == 1) return;

  std::vector<double> h(L), pre, suf;
  std::vector<int32_t> pre_arg, suf_arg;

  for (int i = 0; i + 1 < n; ++i) {
    const double* g_i = chain.unary->v.data() + chain.offset(i);
    const double* m_i = msgs.v.data() + chain.offset(i);
    double* m_next = msgs.v.data() + chain.offset(i + 1);
    int32_t* o_next = argmax.data() + chain.offset(i + 1);
    for (int s = 0; s < L; ++s) h[s] = g_i[s] + m_i[s];

    if (chain.pw->is_jump()) {
      detail::SweepPenalties p = detail::jump_penalties(*chain.pw, chain.node(i), chain.dir);
      detail::jump_step(h.data(), L, p.p1p, p.p1n, p.p2p, p.p2n, p.p3, m_next, o_next, pre,
                        pre_arg, suf, suf_arg);
    } else {
      const double* mat;
      int srow, scol;
      detail::matrix_strides(chain.dir, chain.pw->matrix(), mat, srow, scol);
      double ew = chain.pw->edge_weight(chain.node(i), chain.dir);
      detail::matrix_step(h.data(), L, mat, srow, scol, ew, m_next, o_next);
    }

    if (normalize) {
      double c = m_next[0];
      for (int t = 1; t < L; ++t) c = std::max(c, m_next[t]);
      for (int t = 0; t < L; ++t) m_next[t] -= c;
    }
  }
}

// Backprop of dp_forward. Given the loss gradient in the chain's messages,
// accumulates the gradient in the chain's unaries into `d_unary` (at grid
// offsets) and routes every pairwise contribution through
// sink(sender, dir, s, t, z). Linear time in n*L: only argmax entries carry
// gradient, exactly one per (edge, target label).
template <class Sink>
void dp_backward(const ChainView& chain, const std::vector<int32_t>& argmax,
                 const Volume& d_messages, Volume& d_unary, Sink&& sink) {
  int L = chain.labels();
  int n = chain.n;
  if (n == 1) return;

  // chain-local accumulator: the recursion needs the gradient gathered by
  // this chain alone, not whatever the caller already has in d_unary
  std::vector<double> gbar((size_t)n * L, 0.0);
  for (int i = n - 2; i >= 0; --i) {
    int off1 = chain.offset(i + 1);
    Pixel sender = chain.node(i);
    for (int t = 0; t < L; ++t) {
      int s = argmax[off1 + t];
      double z = d_messages.v[off1 + t] + gbar[(size_t)(i + 1) * L + t];
      if (z == 0.0) continue;
      gbar[(size_t)i * L + s] += z;
      sink(sender, chain.dir, s, t, z);
    }
  }
  for (int i = 0; i < n; ++i) {
    int off = chain.offset(i);
    for (int s = 0; s < L; ++s) d_unary.v[off + s] += gbar[(size_t)i * L + s];
  }
}

// Redistribution DP: forward messages that leave a (1 - r_i) share of the
// opposite-direction message at each node,
//   m_{i+1}(t) = max_s(g~_i(s) + r_i m_i(s) + f_{i,i+1}(s, t)),
//   g~_i(s)    = g_i(s) + (1 - r_i) mR_i(s),
// where mR holds the messages of a previous dp_forward run in the opposite
// direction, stored at the same grid offsets. r = 1 recovers dp_forward on g.
// No per-step normalization: TBCA reads dual values off these messages.
inline void rdp_forward(const ChainView& chain, const Volume& right_messages,
                        const RedistCoeffs& coeffs, Volume& msgs,
                        std::vector<int32_t>& argmax) {
  int L = chain.labels();
  int n = chain.n;
  assert((int)coeffs.r.size() == n);
  double* m0 = msgs.v.data() + chain.offset(0);
  std::fill(m0, m0 + L, 0.0);
  if (n == 1) return;

  std::vector<double> h(L), pre, suf;
  std::vector<int32_t> pre_arg, suf_arg;

  for (int i = 0; i + 1 < n; ++i) {
    int off = chain.offset(i);
    const double* g_i = chain.unary->v.data() + off;
    const double* mr_i = right_messages.v.data() + off;
    const double* m_i = msgs.v.data() + off;
    double r = coeffs.r[i];
    for (int s = 0; s < L; ++s) h[s] = g_i[s] + (1.0 - r) * mr_i[s] + r * m_i[s];

    double* m_next = msgs.v.data() + chain.offset(i + 1);
    int32_t* o_next = argmax.data() + chain.offset(i + 1);
    if (chain.pw->is_jump()) {
      detail::SweepPenalties p = detail::jump_penalties(*chain.pw, chain.node(i), chain.dir);
      detail::jump_step(h.data(), L, p.p1p, p.p1n, p.p2p, p.p2n, p.p3, m_next, o_next, pre,
                        pre_arg, suf, suf_arg);
    } else {
      const double* mat;
      int srow, scol;
      detail::matrix_strides(chain.dir, chain.pw->matrix(), mat, srow, scol);
      double ew = chain.pw->edge_weight(chain.node(i), chain.dir);
      detail::matrix_step(h.data(), L, mat, srow, scol, ew, m_next, o_next);
    }
  }
}

// Backprop of rdp_forward: dp_backward with the z-line replaced by
// z = m̄_{i+1}(t) + r_{i+1} ḡ_{i+1}(t). Returns the gradient in g~; callers
// split it into the g and mR parts using (1 - r).
template <class Sink>
void rdp_backward(const ChainView& chain, const std::vector<int32_t>& argmax,
                  const RedistCoeffs& coeffs, const Volume& d_messages,
                  Volume& d_unary_tilde, Sink&& sink) {
  int L = chain.labels();
  int n = chain.n;
  if (n == 1) return;
  assert((int)coeffs.r.size() == n);

  std::vector<double> gbar((size_t)n * L, 0.0);
  for (int i = n - 2; i >= 0; --i) {
    int off1 = chain.offset(i + 1);
    Pixel sender = chain.node(i);
    double r_next = coeffs.r[i + 1];
    for (int t = 0; t < L; ++t) {
      int s = argmax[off1 + t];
      double z = d_messages.v[off1 + t] + r_next * gbar[(size_t)(i + 1) * L + t];
      if (z == 0.0) continue;
      gbar[(size_t)i * L + s] += z;
      sink(sender, chain.dir, s, t, z);
    }
  }
  for (int i = 0; i < n; ++i) {
    int off = chain.offset(i);
    for (int s = 0; s < L; ++s) d_unary_tilde.v[off + s] += gbar[(size_t)i * L + s];
  }
}

}  // namespace bpgrid
