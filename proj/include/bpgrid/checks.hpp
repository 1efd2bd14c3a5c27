#pragma once

#include <chrono>
#include <sstream>
#include <string>
#include <vector>

#include "bpgrid/core.hpp"
#include "bpgrid/inference.hpp"
#include "bpgrid/learning.hpp"
#include "bpgrid/matching.hpp"
#include "bpgrid/oracle.hpp"
#include "bpgrid/pyramid.hpp"

// Randomized property suites shared by the check subcommand and the
// acceptance runner. Every suite is deterministic given its seed and reports
// the first failing case.

namespace bpgrid {
namespace checks {

struct SuiteResult {
  std::string name;
  bool pass = true;
  std::string detail;
  double seconds = 0.0;

  void fail(const std::string& msg) {
    if (pass) {
      pass = false;
      detail = msg;
    }
  }
};

namespace detail {

inline PairwiseSpec random_jump_spec(Rng& rng) {
  JumpParams jp;
  jp.p1_pos = uniform(rng, 0, 1.5);
  jp.p1_neg = uniform(rng, 0, 1.5);
  jp.p2_pos = uniform(rng, 0, 1.5);
  jp.p2_neg = uniform(rng, 0, 1.5);
  jp.p3 = uniform(rng, 0, 1.5);
  return PairwiseSpec{jp, std::nullopt};
}

inline PairwiseSpec random_matrix_spec(Rng& rng, int labels) {
  CompatMatrix m(labels);
  for (auto& e : m.horizontal) e = uniform(rng, 0, 1);
  for (auto& e : m.vertical) e = uniform(rng, 0, 1);
  return PairwiseSpec{m, std::nullopt};
}

inline Volume random_unary(Rng& rng, GridShape shape, double lo = -1, double hi = 1) {
  Volume v(shape);
  for (auto& e : v.v) e = uniform(rng, lo, hi);
  return v;
}

// Chain instance as an explicit small graph, edge tables via eval_pairwise.
inline oracle::SmallGraph chain_graph(const Volume& g, const PairwiseSpec& spec) {
  assert(g.shape.height == 1);
  int n = g.shape.width, L = g.shape.labels;
  oracle::SmallGraph graph;
  graph.nodes = n;
  graph.labels = L;
  graph.unary = g.v;
  for (int i = 0; i + 1 < n; ++i) {
    oracle::SmallGraph::Edge e;
    e.u = i;
    e.v = i + 1;
    e.f.resize((size_t)L * L);
    for (int s = 0; s < L; ++s)
      for (int t = 0; t < L; ++t)
        e.f[(size_t)s * L + t] = eval_pairwise(spec, {0, i}, Dir::right, s, t);
    graph.edges.push_back(std::move(e));
  }
  return graph;
}

// The sweep-BP tree of a pixel: all horizontal edges plus the vertical edges
// of the pixel's column.
inline oracle::SmallGraph cross_tree_graph(const Volume& g, const PairwiseSpec& spec,
                                           int column) {
  int H = g.shape.height, W = g.shape.width, L = g.shape.labels;
  oracle::SmallGraph graph;
  graph.nodes = H * W;
  graph.labels = L;
  graph.unary = g.v;
  auto edge = [&](int y, int x, Dir d) {
    oracle::SmallGraph::Edge e;
    e.u = y * W + x;
    e.v = (y + dir_dy(d)) * W + (x + dir_dx(d));
    e.f.resize((size_t)L * L);
    for (int s = 0; s < L; ++s)
      for (int t = 0; t < L; ++t)
        e.f[(size_t)s * L + t] = eval_pairwise(spec, {y, x}, d, s, t);
    graph.edges.push_back(std::move(e));
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x) edge(y, x, Dir::right);
  for (int y = 0; y + 1 < H; ++y) edge(y, column, Dir::down);
  return graph;
}

// max_s |(a - b)(s) - mean label offset|: distance up to an additive constant
inline double dev_up_to_constant(const double* a, const double* b, int L) {
  double c = a[0] - b[0];
  double worst = 0.0;
  for (int s = 1; s < L; ++s) worst = std::max(worst, std::abs(a[s] - b[s] - c));
  return worst;
}

inline int row_argmax(const double* a, int L) {
  int best = 0;
  for (int s = 1; s < L; ++s)
    if (a[s] > a[best]) best = s;
  return best;
}

class Timer {
 public:
  Timer(SuiteResult& r) : r_(r), t0_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  SuiteResult& r_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace detail

// Horizontal sweep max-marginals on single-row grids equal the enumeration
// oracle up to a per-node constant, with identical argmaxes.
inline SuiteResult chain_exactness(int instances, uint64_t seed) {
  SuiteResult res;
  res.name = "chain-exactness";
  detail::Timer timer(res);
  Rng rng(seed);
  for (int k = 0; k < instances; ++k) {
    int n = uniform_int(rng, 1, 6);
    int L = uniform_int(rng, 2, 4);
    Volume g = detail::random_unary(rng, {1, n, L});
    PairwiseSpec f =
        k % 2 ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, L);
    SweepTape tape = sweep_bp_forward(g, f);
    auto mm = oracle::brute_max_marginals(detail::chain_graph(g, f));
    for (int i = 0; i < n; ++i) {
      double dev = detail::dev_up_to_constant(tape.a.row(0, i), mm.data() + (size_t)i * L, L);
      if (dev > 1e-9) {
        std::ostringstream os;
        os << "instance " << k << " node " << i << " deviates by " << dev;
        res.fail(os.str());
        return res;
      }
      if (detail::row_argmax(tape.a.row(0, i), L) !=
          detail::row_argmax(mm.data() + (size_t)i * L, L)) {
        res.fail("instance " + std::to_string(k) + " argmax mismatch at node " +
                 std::to_string(i));
        return res;
      }
    }
  }
  return res;
}

// Sweep-BP log-beliefs equal per-pixel cross-tree enumeration up to a
// per-pixel constant on small grids.
inline SuiteResult tree_equivalence(int grids, uint64_t seed) {
  SuiteResult res;
  res.name = "tree-equivalence";
  detail::Timer timer(res);
  Rng rng(seed);
  for (int k = 0; k < grids; ++k) {
    int L = uniform_int(rng, 2, 3);
    Volume g = detail::random_unary(rng, {3, 3, L});
    PairwiseSpec f =
        k % 2 ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, L);
    SweepTape tape = sweep_bp_forward(g, f);
    for (int x = 0; x < 3; ++x) {
      auto mm = oracle::brute_max_marginals(detail::cross_tree_graph(g, f, x));
      for (int y = 0; y < 3; ++y) {
        double dev = detail::dev_up_to_constant(tape.log_beliefs.row(y, x),
                                                mm.data() + (size_t)(y * 3 + x) * L, L);
        if (dev > 1e-9) {
          std::ostringstream os;
          os << "grid " << k << " pixel (" << y << "," << x << ") deviates by " << dev;
          res.fail(os.str());
          return res;
        }
      }
    }
  }
  return res;
}

namespace detail {

struct GradCase {
  std::string op;
  double err;
};

inline double check_dp_gradients(Rng& rng, bool jump, bool rdp) {
  int n = uniform_int(rng, 2, 5), L = uniform_int(rng, 2, 4);
  Volume g = random_unary(rng, {1, n, L});
  oracle::perturb_ties(g.v, rng());
  PairwiseSpec f = jump ? random_jump_spec(rng) : random_matrix_spec(rng, L);
  bool with_weights = jump && uniform(rng, 0, 1) < 0.5;
  if (with_weights) {
    f.jump().per_pixel_weights.emplace();
    for (int d = 0; d < 4; ++d) {
      (*f.jump().per_pixel_weights)[d] = Image(1, n);
      for (auto& w : (*f.jump().per_pixel_weights)[d].v) w = uniform(rng, 0.2, 1.5);
    }
  }
  Volume dm = random_unary(rng, {1, n, L});
  Volume mr = rdp ? random_unary(rng, {1, n, L}) : Volume();
  RedistCoeffs coeffs = RedistCoeffs::standard(n);

  auto forward = [&](const Volume& gg, const PairwiseSpec& ff) {
    Volume m(gg.shape);
    std::vector<int32_t> a(gg.shape.size(), 0);
    if (rdp) rdp_forward(row_chain(gg, ff, 0, Dir::right), mr, coeffs, m, a);
    else dp_forward(row_chain(gg, ff, 0, Dir::right), m, a, false);
    double l = 0;
    for (size_t i = 0; i < m.v.size(); ++i) l += dm.v[i] * m.v[i];
    return l;
  };

  Volume m(g.shape);
  std::vector<int32_t> arg(g.shape.size(), 0);
  if (rdp) rdp_forward(row_chain(g, f, 0, Dir::right), mr, coeffs, m, arg);
  else dp_forward(row_chain(g, f, 0, Dir::right), m, arg, false);

  Volume dg(g.shape);
  PairwiseGrad pg(f);
  auto sink = [&pg](Pixel p, Dir d, int s, int t, double z) { pg.add(p, d, s, t, z); };
  if (rdp) rdp_backward(row_chain(g, f, 0, Dir::right), arg, coeffs, dm, dg, sink);
  else dp_backward(row_chain(g, f, 0, Dir::right), arg, dm, dg, sink);

  double worst = oracle::fd_gradcheck([&](const std::vector<double>& gv) {
    Volume gg = g;
    gg.v = gv;
    return forward(gg, f);
  }, g.v, dg.v, oracle::axis_directions(g.v.size()));

  if (jump) {
    const JumpParams& jp = f.jump();
    std::vector<double> point{jp.p1_pos, jp.p1_neg, jp.p2_pos, jp.p2_neg, jp.p3};
    const JumpGrad& jg = pg.jump();
    std::vector<double> an{jg.p1_pos, jg.p1_neg, jg.p2_pos, jg.p2_neg, jg.p3};
    worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& pv) {
      PairwiseSpec f2 = f;
      f2.jump().p1_pos = pv[0];
      f2.jump().p1_neg = pv[1];
      f2.jump().p2_pos = pv[2];
      f2.jump().p2_neg = pv[3];
      f2.jump().p3 = pv[4];
      return forward(g, f2);
    }, point, an, oracle::axis_directions(5)));
    if (with_weights) {
      // flatten the four weight maps
      std::vector<double> point_w, an_w;
      for (int d = 0; d < 4; ++d) {
        const Image& wmap = (*jp.per_pixel_weights)[d];
        const Image& gmap = (*pg.jump().per_pixel_weights)[d];
        point_w.insert(point_w.end(), wmap.v.begin(), wmap.v.end());
        an_w.insert(an_w.end(), gmap.v.begin(), gmap.v.end());
      }
      worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& wv) {
        PairwiseSpec f2 = f;
        size_t at = 0;
        for (int d = 0; d < 4; ++d)
          for (auto& w : (*f2.jump().per_pixel_weights)[d].v) w = wv[at++];
        return forward(g, f2);
      }, point_w, an_w, oracle::axis_directions(point_w.size())));
    }
  } else {
    const CompatMatrix& cm = f.matrix();
    std::vector<double> point = cm.horizontal;
    point.insert(point.end(), cm.vertical.begin(), cm.vertical.end());
    const CompatMatrix& dm2 = pg.matrix().m;
    std::vector<double> an = dm2.horizontal;
    an.insert(an.end(), dm2.vertical.begin(), dm2.vertical.end());
    worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& pv) {
      PairwiseSpec f2 = f;
      size_t half = f2.matrix().horizontal.size();
      std::copy(pv.begin(), pv.begin() + half, f2.matrix().horizontal.begin());
      std::copy(pv.begin() + half, pv.end(), f2.matrix().vertical.begin());
      return forward(g, f2);
    }, point, an, oracle::axis_directions(point.size())));
  }
  return worst;
}

inline double check_sweep_gradients(Rng& rng, bool jump) {
  int H = 4, W = 4, L = 3;
  Volume g = random_unary(rng, {H, W, L});
  oracle::perturb_ties(g.v, rng());
  PairwiseSpec f = jump ? random_jump_spec(rng) : random_matrix_spec(rng, L);
  LabelMap gt(H, W);
  for (auto& v : gt.v) v = uniform_int(rng, 0, L - 1);

  auto loss_of = [&](const Volume& gg, const PairwiseSpec& ff) {
    return nll_loss(sweep_bp_forward(gg, ff).beliefs, gt).loss;
  };
  SweepTape tape = sweep_bp_forward(g, f);
  NllResult nll = nll_loss(tape.beliefs, gt);
  GradBundle gb = sweep_bp_backward(tape, nll.d_beliefs);

  double worst = oracle::fd_gradcheck([&](const std::vector<double>& gv) {
    Volume gg = g;
    gg.v = gv;
    return loss_of(gg, f);
  }, g.v, gb.d_unary.v, oracle::axis_directions(g.v.size()));

  if (jump) {
    const JumpParams& jp = f.jump();
    std::vector<double> point{jp.p1_pos, jp.p1_neg, jp.p2_pos, jp.p2_neg, jp.p3};
    const JumpGrad& jg = gb.d_pairwise.jump();
    std::vector<double> an{jg.p1_pos, jg.p1_neg, jg.p2_pos, jg.p2_neg, jg.p3};
    worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& pv) {
      PairwiseSpec f2 = f;
      f2.jump().p1_pos = pv[0];
      f2.jump().p1_neg = pv[1];
      f2.jump().p2_pos = pv[2];
      f2.jump().p2_neg = pv[3];
      f2.jump().p3 = pv[4];
      return loss_of(g, f2);
    }, point, an, oracle::axis_directions(5)));
  } else {
    const CompatMatrix& cm = f.matrix();
    std::vector<double> point = cm.horizontal;
    point.insert(point.end(), cm.vertical.begin(), cm.vertical.end());
    const CompatMatrix& dmat = gb.d_pairwise.matrix().m;
    std::vector<double> an = dmat.horizontal;
    an.insert(an.end(), dmat.vertical.begin(), dmat.vertical.end());
    worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& pv) {
      PairwiseSpec f2 = f;
      size_t half = f2.matrix().horizontal.size();
      std::copy(pv.begin(), pv.begin() + half, f2.matrix().horizontal.begin());
      std::copy(pv.begin() + half, pv.end(), f2.matrix().vertical.begin());
      return loss_of(g, f2);
    }, point, an, oracle::axis_directions(point.size())));
  }
  return worst;
}

inline double check_sgm_gradients(Rng& rng) {
  int H = 3, W = 4, L = 3;
  Volume g = random_unary(rng, {H, W, L});
  oracle::perturb_ties(g.v, rng());
  PairwiseSpec f = random_jump_spec(rng);
  Volume db = random_unary(rng, {H, W, L});
  SgmTape tape = sgm(g, f, {.normalize = false});
  GradBundle gb = sgm_backward(tape, g, db, {.normalize = false});
  return oracle::fd_gradcheck([&](const std::vector<double>& gv) {
    Volume gg = g;
    gg.v = gv;
    SgmTape t = sgm(gg, f, {.normalize = false});
    double l = 0;
    for (size_t i = 0; i < db.v.size(); ++i) l += db.v[i] * t.log_beliefs.v[i];
    return l;
  }, g.v, gb.d_unary.v, oracle::axis_directions(g.v.size()));
}

inline double check_softmax_nll_gradients(Rng& rng) {
  int L = uniform_int(rng, 2, 5);
  Volume b = random_unary(rng, {2, 2, L});
  LabelMap gt(2, 2);
  for (auto& v : gt.v) v = uniform_int(rng, 0, L - 1);
  BeliefVolume B = read_beliefs(b);
  NllResult r = nll_loss(B, gt);
  Volume db = softmax_backward(B, r.d_beliefs);
  return oracle::fd_gradcheck([&](const std::vector<double>& bv) {
    Volume bb = b;
    bb.v = bv;
    return nll_loss(read_beliefs(bb), gt).loss;
  }, b.v, db.v, oracle::axis_directions(b.v.size()));
}

inline double check_huber_gradients(Rng& rng) {
  Image y(2, 3), gt(2, 3);
  for (auto& v : y.v) v = uniform(rng, -3, 3);
  for (auto& v : gt.v) v = uniform(rng, -3, 3);
  double delta = uniform(rng, 0.3, 2.0);
  HuberResult r = huber_loss(y, gt, delta);
  return oracle::fd_gradcheck([&](const std::vector<double>& yv) {
    Image yy = y;
    yy.v = yv;
    return huber_loss(yy, gt, delta).loss;
  }, y.v, r.d_y.v, oracle::axis_directions(y.v.size()));
}

inline double check_refine_gradients(Rng& rng) {
  int L = uniform_int(rng, 4, 8);
  Volume b = random_unary(rng, {2, 2, L});
  oracle::perturb_ties(b.v, rng());
  BeliefVolume B = read_beliefs(b);
  RefineTape tape = refine_basic(B, 3);
  Image dy(2, 2);
  for (auto& v : dy.v) v = uniform(rng, -1, 1);
  Volume dB = refine_backward(tape, B.shape, dy);
  return oracle::fd_gradcheck([&](const std::vector<double>& Bv) {
    Volume BB = B;
    BB.v = Bv;
    RefineTape t = refine_basic(BB, 3);
    double l = 0;
    for (size_t i = 0; i < dy.v.size(); ++i) l += dy.v[i] * t.y.v[i];
    return l;
  }, B.v, dB.v, oracle::axis_directions(B.v.size()));
}

inline double check_upsample_gradients(Rng& rng) {
  Volume c({2, 2, 2});
  for (auto& v : c.v) v = uniform(rng, 0.05, 1.0);
  UpsampleTape tape = upsample_beliefs(c);
  Volume dy = random_unary(rng, tape.out.shape);
  Volume dc = upsample_beliefs_backward(tape, dy);
  return oracle::fd_gradcheck([&](const std::vector<double>& cv) {
    Volume cc = c;
    cc.v = cv;
    UpsampleTape t = upsample_beliefs(cc);
    double l = 0;
    for (size_t i = 0; i < dy.v.size(); ++i) l += dy.v[i] * t.out.v[i];
    return l;
  }, c.v, dc.v, oracle::axis_directions(c.v.size()));
}

inline double check_hierarchy_gradients(Rng& rng) {
  Volume qc = random_unary(rng, {2, 2, 2}, 0.0, 1.0);
  Volume qf = random_unary(rng, {4, 4, 4}, 0.0, 1.0);
  oracle::perturb_ties(qc.v, rng());
  oracle::perturb_ties(qf.v, rng());
  PairwiseSpec f = random_jump_spec(rng);
  LabelMap gtc(2, 2), gtf(4, 4);
  for (auto& v : gtc.v) v = uniform_int(rng, 0, 1);
  for (auto& v : gtf.v) v = uniform_int(rng, 0, 3);
  TrainConfig cfg;
  double T0 = uniform(rng, 0.5, 2.0);

  auto loss_at = [&](double tval, const Volume& qcoarse) {
    HierTape t = run_hierarchy({qcoarse, qf}, {&f, &f}, Temperature{tval});
    std::vector<BeliefVolume> B{t.bp[0].beliefs, t.bp[1].beliefs};
    return deep_supervised_loss(B, {gtc, gtf}, nullptr, nullptr, cfg).loss;
  };
  HierTape tape = run_hierarchy({qc, qf}, {&f, &f}, Temperature{T0});
  std::vector<BeliefVolume> B{tape.bp[0].beliefs, tape.bp[1].beliefs};
  DeepSupervisionResult ds = deep_supervised_loss(B, {gtc, gtf}, nullptr, nullptr, cfg);
  HierGrads hg = run_hierarchy_backward(tape, ds.d_beliefs);

  double worst = oracle::fd_gradcheck(
      [&](const std::vector<double>& x) { return loss_at(x[0], qc); }, {T0},
      {hg.d_temperature}, oracle::axis_directions(1));
  worst = std::max(worst, oracle::fd_gradcheck([&](const std::vector<double>& qv) {
    Volume q2 = qc;
    q2.v = qv;
    return loss_at(T0, q2);
  }, qc.v, hg.d_q[0].v, oracle::axis_directions(qc.v.size())));
  return worst;
}

}  // namespace detail

// Central-difference validation of every backward path, step 1e-4, relative
// tolerance 1e-4, on tie-perturbed random instances.
inline SuiteResult gradcheck_suite(int per_op, uint64_t seed) {
  SuiteResult res;
  res.name = "gradcheck";
  detail::Timer timer(res);
  Rng rng(seed);
  struct Op {
    const char* name;
    std::function<double(Rng&)> run;
  };
  std::vector<Op> ops{
      {"dp-jump", [](Rng& r) { return detail::check_dp_gradients(r, true, false); }},
      {"dp-matrix", [](Rng& r) { return detail::check_dp_gradients(r, false, false); }},
      {"rdp-jump", [](Rng& r) { return detail::check_dp_gradients(r, true, true); }},
      {"rdp-matrix", [](Rng& r) { return detail::check_dp_gradients(r, false, true); }},
      {"softmax-nll", detail::check_softmax_nll_gradients},
      {"huber", detail::check_huber_gradients},
      {"refine", detail::check_refine_gradients},
      {"upsample", detail::check_upsample_gradients},
      {"hierarchy", detail::check_hierarchy_gradients},
      {"sweep-jump", [](Rng& r) { return detail::check_sweep_gradients(r, true); }},
      {"sweep-matrix", [](Rng& r) { return detail::check_sweep_gradients(r, false); }},
      {"sgm", detail::check_sgm_gradients},
  };
  for (const Op& op : ops) {
    for (int k = 0; k < per_op; ++k) {
      double err = op.run(rng);
      if (err > 1e-4) {
        std::ostringstream os;
        os << op.name << " instance " << k << " worst relative error " << err;
        res.fail(os.str());
        return res;
      }
    }
  }
  return res;
}

// Non-decreasing TBCA dual trace on random grids, both pairwise models.
inline SuiteResult tbca_monotone(int instances, int iters, uint64_t seed) {
  SuiteResult res;
  res.name = "tbca-monotone";
  detail::Timer timer(res);
  Rng rng(seed);
  for (int k = 0; k < instances; ++k) {
    Volume g = detail::random_unary(rng, {6, 6, 3});
    PairwiseSpec f =
        k % 2 ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, 3);
    TbcaResult r = tbca(g, f, iters);
    for (size_t i = 1; i < r.dual_trace.size(); ++i) {
      if (r.dual_trace[i] < r.dual_trace[i - 1] - 1e-9) {
        std::ostringstream os;
        os << "instance " << k << " pass " << i << ": dual dropped from "
           << r.dual_trace[i - 1] << " to " << r.dual_trace[i];
        res.fail(os.str());
        return res;
      }
    }
  }
  return res;
}

// max <= smax <= max + log n on random vectors.
inline SuiteResult smax_sandwich(int vectors, uint64_t seed) {
  SuiteResult res;
  res.name = "smax-sandwich";
  detail::Timer timer(res);
  Rng rng(seed);
  std::vector<double> a;
  for (int k = 0; k < vectors; ++k) {
    int n = uniform_int(rng, 1, 64);
    a.resize(n);
    for (auto& v : a) v = uniform(rng, -30, 30);
    double mx = *std::max_element(a.begin(), a.end());
    double sm = oracle::smax(a);
    if (sm < mx - 1e-12 || sm > mx + std::log((double)n) + 1e-12) {
      std::ostringstream os;
      os << "vector " << k << ": max " << mx << " smax " << sm << " n " << n;
      res.fail(os.str());
      return res;
    }
  }
  return res;
}

// Belief invariance to per-step message normalization, and bitwise
// reproducibility of repeated runs.
inline SuiteResult normalization_determinism(int instances, uint64_t seed) {
  SuiteResult res;
  res.name = "normalization-determinism";
  detail::Timer timer(res);
  Rng rng(seed);
  for (int k = 0; k < instances; ++k) {
    int H = uniform_int(rng, 2, 6), W = uniform_int(rng, 2, 6), L = uniform_int(rng, 2, 4);
    Volume g = detail::random_unary(rng, {H, W, L}, -5, 5);
    PairwiseSpec f =
        k % 2 ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, L);
    SweepTape on = sweep_bp_forward(g, f, {.normalize = true});
    SweepTape off = sweep_bp_forward(g, f, {.normalize = false});
    for (size_t i = 0; i < on.beliefs.v.size(); ++i) {
      if (std::abs(on.beliefs.v[i] - off.beliefs.v[i]) > 1e-9) {
        res.fail("instance " + std::to_string(k) + " beliefs differ with normalization");
        return res;
      }
    }
    SweepTape again = sweep_bp_forward(g, f, {.normalize = true});
    if (on.beliefs.v != again.beliefs.v || on.log_beliefs.v != again.log_beliefs.v) {
      res.fail("instance " + std::to_string(k) + " repeated run not bitwise identical");
      return res;
    }
    for (int d = 0; d < 4; ++d)
      if (on.arg[d] != again.arg[d]) {
        res.fail("instance " + std::to_string(k) + " argmax records differ across runs");
        return res;
      }
  }
  return res;
}

// SGM log-beliefs coincide with the horizontal sweep max-marginals on
// single-row grids.
inline SuiteResult sgm_chain_identity(int instances, uint64_t seed) {
  SuiteResult res;
  res.name = "sgm-chain-identity";
  detail::Timer timer(res);
  Rng rng(seed);
  for (int k = 0; k < instances; ++k) {
    int n = uniform_int(rng, 1, 8), L = uniform_int(rng, 2, 4);
    Volume g = detail::random_unary(rng, {1, n, L});
    PairwiseSpec f =
        k % 2 ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, L);
    SweepTape sweep = sweep_bp_forward(g, f);
    SgmTape s = sgm(g, f);
    for (size_t i = 0; i < g.v.size(); ++i)
      if (std::abs(s.log_beliefs.v[i] - sweep.a.v[i]) > 1e-12) {
        res.fail("instance " + std::to_string(k) + " sgm/chain mismatch");
        return res;
      }
  }
  return res;
}

struct BenchPoint {
  int labels = 0;
  double seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchPoint> points;
  double slope = 0.0;  // log-log fit of seconds vs labels
};

// Wall-clock of one full message pass (four DP families) per label count,
// with a least-squares log-log slope.
inline BenchResult bench_message_pass(bool jump, const std::vector<int>& labels, int size,
                                      uint64_t seed, double min_seconds = 0.05) {
  BenchResult res;
  for (int L : labels) {
    Rng rng(seed + L);
    Volume g = checks::detail::random_unary(rng, {size, size, L});
    PairwiseSpec f =
        jump ? detail::random_jump_spec(rng) : detail::random_matrix_spec(rng, L);
    sgm(g, f);  // warm-up
    int reps = 0;
    auto t0 = std::chrono::steady_clock::now();
    double elapsed = 0.0;
    do {
      SgmTape tape = sgm(g, f);
      reps++;
      elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } while (elapsed < min_seconds);
    res.points.push_back({L, elapsed / reps});
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = (int)res.points.size();
  for (const auto& p : res.points) {
    double x = std::log((double)p.labels), y = std::log(p.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return res;
}

}  // namespace checks
}  // namespace bpgrid
