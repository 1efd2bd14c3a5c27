#pragma once

#include <array>

#include "bpgrid/chain_dp.hpp"
#include "bpgrid/core.hpp"
#include "bpgrid/grid.hpp"

namespace bpgrid {

struct InferOptions {
  bool normalize = true;  // per-step max subtraction inside DP
  int threads = 1;
};

// Everything the backward pass needs from a sweep-BP forward run. msg[d] and
// arg[d] are indexed by the sweep's propagation direction: msg[Dir::right] is
// the message into each pixel from its left neighbor, and so on.
struct SweepTape {
  GridShape shape;
  const PairwiseSpec* spec = nullptr;
  std::array<Volume, 4> msg;
  std::array<std::vector<int32_t>, 4> arg;
  Volume a;            // beliefs after the left-right pass
  Volume log_beliefs;  // b = a + up/down messages
  BeliefVolume beliefs;
};

// Row-normalized softmax, shift-invariant (per-pixel max subtracted first).
inline BeliefVolume read_beliefs(const Volume& log_beliefs) {
  BeliefVolume out(log_beliefs.shape);
  int L = log_beliefs.shape.labels;
  for (int p = 0; p < log_beliefs.shape.pixels(); ++p) {
    const double* b = log_beliefs.v.data() + (size_t)p * L;
    double* q = out.v.data() + (size_t)p * L;
    double c = b[0];
    for (int s = 1; s < L; ++s) c = std::max(c, b[s]);
    double sum = 0.0;
    for (int s = 0; s < L; ++s) {
      q[s] = std::exp(b[s] - c);
      sum += q[s];
    }
    for (int s = 0; s < L; ++s) q[s] /= sum;
  }
  return out;
}

// b̄_s = B_s (B̄_s - Σ_t B̄_t B_t), per pixel.
inline Volume softmax_backward(const BeliefVolume& beliefs, const Volume& d_beliefs) {
  Volume out(beliefs.shape);
  int L = beliefs.shape.labels;
  for (int p = 0; p < beliefs.shape.pixels(); ++p) {
    const double* b = beliefs.v.data() + (size_t)p * L;
    const double* db = d_beliefs.v.data() + (size_t)p * L;
    double* o = out.v.data() + (size_t)p * L;
    double dot = 0.0;
    for (int s = 0; s < L; ++s) dot += db[s] * b[s];
    for (int s = 0; s < L; ++s) o[s] = b[s] * (db[s] - dot);
  }
  return out;
}

// Per-pixel argmax, smallest label on ties.
inline LabelMap wta(const Volume& volume) {
  LabelMap out(volume.shape.height, volume.shape.width);
  int L = volume.shape.labels;
  for (int p = 0; p < volume.shape.pixels(); ++p) {
    const double* row = volume.v.data() + (size_t)p * L;
    int best = 0;
    for (int s = 1; s < L; ++s)
      if (row[s] > row[best]) best = s;
    out.v[p] = best;
  }
  return out;
}

namespace detail {

inline void add_into(Volume& dst, const Volume& a) {
  for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += a.v[i];
}

inline Volume sum3(const Volume& a, const Volume& b, const Volume& c) {
  Volume out(a.shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] + b.v[i] + c.v[i];
  return out;
}

// Runs fn(chain_index, pairwise_grad_sink) over `count` chains, with
// per-worker gradient accumulators reduced in worker order afterwards so the
// result does not depend on scheduling.
template <class Fn>
void chains_backward(int count, int threads, PairwiseGrad& pg, Fn&& fn) {
  if (threads <= 0) threads = (int)std::thread::hardware_concurrency();
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i, pg);
    return;
  }
  std::vector<PairwiseGrad> locals(threads, PairwiseGrad(*pg.spec));
  std::vector<std::thread> pool;
  int chunk = (count + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    int lo = w * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, w, &locals, &fn] {
      for (int i = lo; i < hi; ++i) fn(i, locals[w]);
    });
  }
  for (auto& t : pool) t.join();
  for (auto& l : locals) pg.accumulate(l);
}

}  // namespace detail

// Sweep belief propagation: horizontal chains first, then vertical chains on
// the horizontal max-marginals, then the softmax readout. Keeps the full tape
// for the backward pass.
inline SweepTape sweep_bp_forward(const UnaryVolume& g, const PairwiseSpec& spec,
                                  const InferOptions& opts = {}) {
  assert(g.shape.labels >= 2);
  SweepTape tape;
  tape.shape = g.shape;
  tape.spec = &spec;
  for (int d = 0; d < 4; ++d) {
    tape.msg[d] = Volume(g.shape);
    tape.arg[d].assign(g.shape.size(), 0);
  }

  for (Dir d : {Dir::right, Dir::left}) {
    parallel_for(0, g.shape.height, opts.threads, [&, d](int y) {
      dp_forward(row_chain(g, spec, y, d), tape.msg[(int)d], tape.arg[(int)d],
                 opts.normalize);
    });
  }
  tape.a = detail::sum3(g, tape.msg[(int)Dir::right], tape.msg[(int)Dir::left]);

  for (Dir d : {Dir::down, Dir::up}) {
    parallel_for(0, g.shape.width, opts.threads, [&, d](int x) {
      dp_forward(col_chain(tape.a, spec, x, d), tape.msg[(int)d], tape.arg[(int)d],
                 opts.normalize);
    });
  }
  tape.log_beliefs =
      detail::sum3(tape.a, tape.msg[(int)Dir::down], tape.msg[(int)Dir::up]);
  tape.beliefs = read_beliefs(tape.log_beliefs);
  return tape;
}

// Backward through the whole sweep: softmax, the vertical DP pair, the
// horizontal DP pair, and the direct unary paths, in reverse composition
// order. d_temperature is left at zero; the temperature enters upstream of g.
inline GradBundle sweep_bp_backward(const SweepTape& tape, const Volume& d_beliefs,
                                    const InferOptions& opts = {}) {
  const PairwiseSpec& spec = *tape.spec;
  GradBundle out(tape.shape, spec);

  Volume db = softmax_backward(tape.beliefs, d_beliefs);

  // b = a + m_up + m_down: gradient db flows to a directly and into both
  // vertical message families
  Volume d_a = db;
  for (Dir d : {Dir::down, Dir::up}) {
    detail::chains_backward(tape.shape.width, opts.threads, out.d_pairwise,
                            [&, d](int x, PairwiseGrad& pg) {
                              dp_backward(col_chain(tape.a, spec, x, d), tape.arg[(int)d],
                                          db, d_a,
                                          [&pg](Pixel p, Dir dd, int s, int t, double z) {
                                            pg.add(p, dd, s, t, z);
                                          });
                            });
  }

  // a = g + m_left + m_right
  out.d_unary = d_a;
  for (Dir d : {Dir::right, Dir::left}) {
    detail::chains_backward(tape.shape.height, opts.threads, out.d_pairwise,
                            [&, d](int y, PairwiseGrad& pg) {
                              dp_backward(row_chain(tape.a, spec, y, d), tape.arg[(int)d],
                                          d_a, out.d_unary,
                                          [&pg](Pixel p, Dir dd, int s, int t, double z) {
                                            pg.add(p, dd, s, t, z);
                                          });
                            });
  }
  return out;
}

struct SgmTape {
  GridShape shape;
  const PairwiseSpec* spec = nullptr;
  std::array<Volume, 4> msg;
  std::array<std::vector<int32_t>, 4> arg;
  Volume log_beliefs;  // b = g + sum of all four directional messages
};

// Semi-global matching: four independent directional message families, all on
// the raw unaries, summed with g. The softmax readout is up to the caller.
inline SgmTape sgm(const UnaryVolume& g, const PairwiseSpec& spec,
                   const InferOptions& opts = {}) {
  SgmTape tape;
  tape.shape = g.shape;
  tape.spec = &spec;
  for (int d = 0; d < 4; ++d) {
    tape.msg[d] = Volume(g.shape);
    tape.arg[d].assign(g.shape.size(), 0);
  }
  for (Dir d : {Dir::right, Dir::left}) {
    parallel_for(0, g.shape.height, opts.threads, [&, d](int y) {
      dp_forward(row_chain(g, spec, y, d), tape.msg[(int)d], tape.arg[(int)d],
                 opts.normalize);
    });
  }
  for (Dir d : {Dir::down, Dir::up}) {
    parallel_for(0, g.shape.width, opts.threads, [&, d](int x) {
      dp_forward(col_chain(g, spec, x, d), tape.msg[(int)d], tape.arg[(int)d],
                 opts.normalize);
    });
  }
  tape.log_beliefs = Volume(g.shape);
  for (size_t i = 0; i < g.v.size(); ++i)
    tape.log_beliefs.v[i] = g.v[i] + tape.msg[0].v[i] + tape.msg[1].v[i] +
                            tape.msg[2].v[i] + tape.msg[3].v[i];
  return tape;
}

// Backward of sgm w.r.t. its log-beliefs: the direct g path plus one
// dp_backward per direction family, each fed the same upstream gradient.
inline GradBundle sgm_backward(const SgmTape& tape, const UnaryVolume& g,
                               const Volume& d_log_beliefs, const InferOptions& opts = {}) {
  const PairwiseSpec& spec = *tape.spec;
  GradBundle out(tape.shape, spec);
  out.d_unary = d_log_beliefs;
  for (Dir d : {Dir::right, Dir::left}) {
    detail::chains_backward(tape.shape.height, opts.threads, out.d_pairwise,
                            [&, d](int y, PairwiseGrad& pg) {
                              dp_backward(row_chain(g, spec, y, d), tape.arg[(int)d],
                                          d_log_beliefs, out.d_unary,
                                          [&pg](Pixel p, Dir dd, int s, int t, double z) {
                                            pg.add(p, dd, s, t, z);
                                          });
                            });
  }
  for (Dir d : {Dir::down, Dir::up}) {
    detail::chains_backward(tape.shape.width, opts.threads, out.d_pairwise,
                            [&, d](int x, PairwiseGrad& pg) {
                              dp_backward(col_chain(g, spec, x, d), tape.arg[(int)d],
                                          d_log_beliefs, out.d_unary,
                                          [&pg](Pixel p, Dir dd, int s, int t, double z) {
                                            pg.add(p, dd, s, t, z);
                                          });
                            });
  }
  return out;
}

namespace detail {

// Chain max-marginals u + m_fwd + m_bwd for one family of chains, written
// over the whole grid. Unnormalized DP so reparametrization bookkeeping stays
// exact.
inline Volume family_max_marginals(const Volume& u, const PairwiseSpec& spec,
                                   bool horizontal, int threads) {
  Volume mf(u.shape), mb(u.shape);
  std::vector<int32_t> af(u.shape.size()), ab(u.shape.size());
  if (horizontal) {
    parallel_for(0, u.shape.height, threads, [&](int y) {
      dp_forward(row_chain(u, spec, y, Dir::right), mf, af, false);
      dp_forward(row_chain(u, spec, y, Dir::left), mb, ab, false);
    });
  } else {
    parallel_for(0, u.shape.width, threads, [&](int x) {
      dp_forward(col_chain(u, spec, x, Dir::down), mf, af, false);
      dp_forward(col_chain(u, spec, x, Dir::up), mb, ab, false);
    });
  }
  return sum3(u, mf, mb);
}

}  // namespace detail

// Tree-reweighted BP with the horizontal/vertical chain decomposition.
// Forward-only: splits the unaries between the two families, computes chain
// max-marginals per family and redistributes the disagreement each iteration.
inline Volume trw_t(const UnaryVolume& g, const PairwiseSpec& spec, int iters,
                    const InferOptions& opts = {}) {
  assert(iters >= 1);
  Volume gh(g.shape), gv(g.shape);
  for (size_t i = 0; i < g.v.size(); ++i) gh.v[i] = gv.v[i] = 0.5 * g.v[i];

  Volume b(g.shape);
  for (int it = 0; it < iters; ++it) {
    Volume bh = detail::family_max_marginals(gh, spec, true, opts.threads);
    Volume bv = detail::family_max_marginals(gv, spec, false, opts.threads);
    for (size_t i = 0; i < b.v.size(); ++i) {
      b.v[i] = bh.v[i] + bv.v[i];
      gh.v[i] += 0.5 * b.v[i] - bh.v[i];
      gv.v[i] += 0.5 * b.v[i] - bv.v[i];
    }
  }
  return b;
}

struct TbcaResult {
  Volume log_beliefs;
  std::vector<double> dual_trace;  // one entry per pass (2 per iteration)
};

// Tree block coordinate ascent on horizontal/vertical chains. Each pass
// rebuilds one family's two message fields from the reparametrized unaries
// (original unaries plus the messages of the other family): the backward
// messages by plain DP, the forward ones by redistribution DP. The dual trace
// records the sum over the family's chains of the exact chain optimum, read
// off the final node of each plain-DP run (its message there accumulates the
// whole chain). Families whose chains have no edges are skipped: there is no
// message block to update and no subproblem to score.
inline TbcaResult tbca(const UnaryVolume& g, const PairwiseSpec& spec, int iters,
                       double r_interior = 0.5, const InferOptions& opts = {}) {
  assert(iters >= 1);
  GridShape sh = g.shape;
  std::array<Volume, 4> msg;
  std::array<std::vector<int32_t>, 4> arg;
  for (int d = 0; d < 4; ++d) {
    msg[d] = Volume(sh);
    arg[d].assign(sh.size(), 0);
  }

  auto make_coeffs = [&](int n) {
    RedistCoeffs c = RedistCoeffs::standard(n);
    for (int i = 1; i + 1 < n; ++i) c.r[i] = r_interior;
    return c;
  };

  TbcaResult res;
  for (int it = 0; it < iters; ++it) {
    if (sh.width >= 2) {  // horizontal pass
      Volume a = detail::sum3(g, msg[(int)Dir::down], msg[(int)Dir::up]);
      RedistCoeffs coeffs = make_coeffs(sh.width);
      std::vector<double> duals(sh.height, 0.0);
      parallel_for(0, sh.height, opts.threads, [&](int y) {
        dp_forward(row_chain(a, spec, y, Dir::left), msg[(int)Dir::left],
                   arg[(int)Dir::left], false);
        rdp_forward(row_chain(a, spec, y, Dir::right), msg[(int)Dir::left], coeffs,
                    msg[(int)Dir::right], arg[(int)Dir::right]);
        // x = 0 is the last node of the right-to-left DP
        const double* av = a.row(y, 0);
        const double* mv = msg[(int)Dir::left].row(y, 0);
        double best = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < sh.labels; ++s) best = std::max(best, av[s] + mv[s]);
        duals[y] = best;
      });
      double dual = 0.0;
      for (double d : duals) dual += d;
      res.dual_trace.push_back(dual);
    }
    if (sh.height >= 2) {  // vertical pass
      Volume a = detail::sum3(g, msg[(int)Dir::right], msg[(int)Dir::left]);
      RedistCoeffs coeffs = make_coeffs(sh.height);
      std::vector<double> duals(sh.width, 0.0);
      parallel_for(0, sh.width, opts.threads, [&](int x) {
        dp_forward(col_chain(a, spec, x, Dir::up), msg[(int)Dir::up], arg[(int)Dir::up],
                   false);
        rdp_forward(col_chain(a, spec, x, Dir::down), msg[(int)Dir::up], coeffs,
                    msg[(int)Dir::down], arg[(int)Dir::down]);
        const double* av = a.row(0, x);
        const double* mv = msg[(int)Dir::up].row(0, x);
        double best = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < sh.labels; ++s) best = std::max(best, av[s] + mv[s]);
        duals[x] = best;
      });
      double dual = 0.0;
      for (double d : duals) dual += d;
      res.dual_trace.push_back(dual);
    }
  }
  res.log_beliefs = Volume(sh);
  for (size_t i = 0; i < res.log_beliefs.v.size(); ++i)
    res.log_beliefs.v[i] = g.v[i] + msg[0].v[i] + msg[1].v[i] + msg[2].v[i] + msg[3].v[i];
  return res;
}

}  // namespace bpgrid
