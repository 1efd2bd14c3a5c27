#include <catch2/catch_amalgamated.hpp>

#include "bpgrid/inference.hpp"
#include "bpgrid/oracle.hpp"
#include "support.hpp"

using namespace bpgrid;
using testsup::make_volume;
using testsup::potts;

namespace {

// Fig-2-left tree of a pixel: every horizontal edge of the grid plus the
// vertical edges of the pixel's column.
oracle::SmallGraph cross_tree(const Volume& g, const PairwiseSpec& spec, int column) {
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
      for (int t = 0; t < L; ++t) e.f[(size_t)s * L + t] = eval_pairwise(spec, {y, x}, d, s, t);
    graph.edges.push_back(std::move(e));
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x) edge(y, x, Dir::right);
  for (int y = 0; y + 1 < H; ++y) edge(y, column, Dir::down);
  return graph;
}

void check_equal_up_to_constant(const double* a, const double* b, int L,
                                double tol = 1e-9) {
  double c = a[0] - b[0];
  for (int s = 1; s < L; ++s) CHECK(a[s] - b[s] == Catch::Approx(c).margin(tol));
}

}  // namespace

TEST_CASE("sweep BP with zero pairwise is a per-pixel softmax", "[inference]") {
  Rng rng(301);
  Volume g = testsup::random_volume(rng, {3, 4, 3});
  PairwiseSpec f = potts(0.0);
  SweepTape tape = sweep_bp_forward(g, f);
  BeliefVolume expect = read_beliefs(g);
  for (size_t i = 0; i < expect.v.size(); ++i)
    CHECK(tape.beliefs.v[i] == Catch::Approx(expect.v[i]).margin(1e-12));
}

TEST_CASE("sweep BP on a 1x1 grid is softmax of g", "[inference]") {
  Volume g = make_volume(1, 1, 3, {0.5, -1.0, 2.0});
  PairwiseSpec f = potts(1.0);
  SweepTape tape = sweep_bp_forward(g, f);
  BeliefVolume expect = read_beliefs(g);
  for (size_t i = 0; i < expect.v.size(); ++i)
    CHECK(tape.beliefs.v[i] == Catch::Approx(expect.v[i]).margin(1e-12));
}

TEST_CASE("sweep BP equals cross-tree enumeration on small grids", "[inference]") {
  Rng rng(307);
  for (int rep = 0; rep < 6; ++rep) {
    int L = uniform_int(rng, 2, 3);
    Volume g = testsup::random_volume(rng, {3, 3, L});
    PairwiseSpec f = rep % 2 ? testsup::random_jump(rng) : testsup::random_matrix(rng, L);
    SweepTape tape = sweep_bp_forward(g, f);
    for (int x = 0; x < 3; ++x) {
      auto mm = oracle::brute_max_marginals(cross_tree(g, f, x));
      for (int y = 0; y < 3; ++y)
        check_equal_up_to_constant(tape.log_beliefs.row(y, x),
                                   mm.data() + (size_t)(y * 3 + x) * L, L);
    }
  }
}

TEST_CASE("sweep BP backward on a 1x1 grid is the softmax Jacobian", "[inference]") {
  Volume g = make_volume(1, 1, 3, {0.2, -0.7, 1.1});
  PairwiseSpec f = potts(0.5);
  SweepTape tape = sweep_bp_forward(g, f);
  Volume dB(g.shape);
  dB.at(0, 0, 1) = 1.0;
  GradBundle gb = sweep_bp_backward(tape, dB);

  auto loss = [&](const std::vector<double>& gv) {
    Volume gg = g;
    gg.v = gv;
    return sweep_bp_forward(gg, f).beliefs.at(0, 0, 1);
  };
  double err = oracle::fd_gradcheck(loss, g.v, gb.d_unary.v, oracle::axis_directions(3));
  CHECK(err < 1e-4);
}

TEST_CASE("sweep BP backward matches finite differences of an NLL", "[inference]") {
  Rng rng(311);
  Volume g = testsup::random_volume(rng, {4, 4, 3});
  oracle::perturb_ties(g.v, 313);
  PairwiseSpec f = testsup::random_jump(rng);
  LabelMap gt(4, 4);
  for (auto& v : gt.v) v = uniform_int(rng, 0, 2);

  auto nll_of = [&](const BeliefVolume& B) {
    double l = 0;
    for (int p = 0; p < 16; ++p) l -= std::log(std::max(B.v[p * 3 + gt.v[p]], 1e-12));
    return l / 16;
  };
  SweepTape tape = sweep_bp_forward(g, f);
  Volume dB(g.shape);
  for (int p = 0; p < 16; ++p)
    dB.v[p * 3 + gt.v[p]] = -1.0 / (16 * std::max(tape.beliefs.v[p * 3 + gt.v[p]], 1e-12));
  GradBundle gb = sweep_bp_backward(tape, dB);

  SECTION("gradient in the unaries") {
    auto loss = [&](const std::vector<double>& gv) {
      Volume gg = g;
      gg.v = gv;
      return nll_of(sweep_bp_forward(gg, f).beliefs);
    };
    double err =
        oracle::fd_gradcheck(loss, g.v, gb.d_unary.v, oracle::axis_directions(g.v.size()));
    CHECK(err < 1e-4);
  }
  SECTION("gradient in the jump parameters") {
    const JumpParams& jp = f.jump();
    std::vector<double> point{jp.p1_pos, jp.p1_neg, jp.p2_pos, jp.p2_neg, jp.p3};
    const JumpGrad& jg = gb.d_pairwise.jump();
    std::vector<double> analytic{jg.p1_pos, jg.p1_neg, jg.p2_pos, jg.p2_neg, jg.p3};
    auto loss = [&](const std::vector<double>& pv) {
      JumpParams j2;
      j2.p1_pos = pv[0];
      j2.p1_neg = pv[1];
      j2.p2_pos = pv[2];
      j2.p2_neg = pv[3];
      j2.p3 = pv[4];
      PairwiseSpec f2{j2, std::nullopt};
      return nll_of(sweep_bp_forward(g, f2).beliefs);
    };
    double err = oracle::fd_gradcheck(loss, point, analytic, oracle::axis_directions(5));
    CHECK(err < 1e-4);
  }
  SECTION("zero upstream gradient") {
    Volume zero(g.shape);
    GradBundle gz = sweep_bp_backward(tape, zero);
    CHECK(gz.d_unary.v == std::vector<double>(g.v.size(), 0.0));
    const JumpGrad& jg = gz.d_pairwise.jump();
    CHECK(jg.p1_pos == 0.0);
    CHECK(jg.p3 == 0.0);
  }
}

TEST_CASE("SGM equals the horizontal sweep on single-row grids", "[inference]") {
  Rng rng(331);
  for (int rep = 0; rep < 10; ++rep) {
    int n = uniform_int(rng, 1, 8), L = uniform_int(rng, 2, 4);
    Volume g = testsup::random_volume(rng, {1, n, L});
    PairwiseSpec f = rep % 2 ? testsup::random_jump(rng) : testsup::random_matrix(rng, L);
    SweepTape sweep = sweep_bp_forward(g, f);
    SgmTape s = sgm(g, f);
    for (size_t i = 0; i < g.v.size(); ++i)
      CHECK(s.log_beliefs.v[i] == Catch::Approx(sweep.a.v[i]).margin(1e-12));
  }
}

TEST_CASE("SGM with zero pairwise preserves the unary argmax", "[inference]") {
  Rng rng(337);
  Volume g = testsup::random_volume(rng, {3, 3, 4});
  PairwiseSpec f = potts(0.0);
  SgmTape s = sgm(g, f);
  LabelMap w1 = wta(s.log_beliefs), w2 = wta(g);
  CHECK(w1.v == w2.v);
}

TEST_CASE("SGM matches a direct evaluation of the four-direction sum", "[inference]") {
  Rng rng(341);
  Volume g = testsup::random_volume(rng, {2, 2, 2});
  PairwiseSpec f = testsup::random_matrix(rng, 2);
  SgmTape s = sgm(g, f, {.normalize = false});

  // independent evaluation: every direction family is a single two-node DP
  auto msg = [&](int y, int x, Dir d) {  // message INTO (y,x) along sweep d
    int sy = y - dir_dy(d), sx = x - dir_dx(d);
    std::vector<double> out(2, -1e300);
    if (sy < 0 || sy >= 2 || sx < 0 || sx >= 2) return std::vector<double>(2, 0.0);
    for (int t = 0; t < 2; ++t)
      for (int ss = 0; ss < 2; ++ss)
        out[t] = std::max(out[t], g.at(sy, sx, ss) + eval_pairwise(f, {sy, sx}, d, ss, t));
    return out;
  };
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int t = 0; t < 2; ++t) {
        double expect = g.at(y, x, t) + msg(y, x, Dir::right)[t] + msg(y, x, Dir::left)[t] +
                        msg(y, x, Dir::down)[t] + msg(y, x, Dir::up)[t];
        CHECK(s.log_beliefs.at(y, x, t) == Catch::Approx(expect).margin(1e-12));
      }
}

TEST_CASE("SGM backward matches finite differences", "[inference]") {
  Rng rng(347);
  Volume g = testsup::random_volume(rng, {3, 3, 3});
  oracle::perturb_ties(g.v, 349);
  PairwiseSpec f = testsup::random_jump(rng);
  Volume db = testsup::random_volume(rng, {3, 3, 3});

  SgmTape tape = sgm(g, f, {.normalize = false});
  GradBundle gb = sgm_backward(tape, g, db, {.normalize = false});
  auto loss = [&](const std::vector<double>& gv) {
    Volume gg = g;
    gg.v = gv;
    SgmTape t2 = sgm(gg, f, {.normalize = false});
    double l = 0;
    for (size_t i = 0; i < db.v.size(); ++i) l += db.v[i] * t2.log_beliefs.v[i];
    return l;
  };
  double err =
      oracle::fd_gradcheck(loss, g.v, gb.d_unary.v, oracle::axis_directions(g.v.size()));
  CHECK(err < 1e-4);
}

TEST_CASE("TRW-T fixed points and chain exactness", "[inference]") {
  SECTION("zero pairwise, uniform unaries: uniform beliefs") {
    Volume g({2, 2, 3}, 1.0);
    PairwiseSpec f = potts(0.0);
    Volume b = trw_t(g, f, 3);
    BeliefVolume B = read_beliefs(b);
    for (double v : B.v) CHECK(v == Catch::Approx(1.0 / 3).margin(1e-12));
  }
  SECTION("single-row grids converge to exact chain max-marginals") {
    Rng rng(353);
    Volume g = testsup::random_volume(rng, {1, 5, 3});
    PairwiseSpec f = testsup::random_jump(rng);
    Volume b = trw_t(g, f, 30);
    ChainView chain = row_chain(g, f, 0, Dir::right);
    auto mm = oracle::brute_max_marginals(testsup::chain_graph(chain));
    for (int x = 0; x < 5; ++x)
      check_equal_up_to_constant(b.row(0, x), mm.data() + (size_t)x * 3, 3, 1e-7);
  }
}

TEST_CASE("TBCA trivial and chain cases", "[inference]") {
  SECTION("zero pairwise: dual equals the sum of unary maxima after one pass") {
    Rng rng(359);
    Volume g = testsup::random_volume(rng, {3, 4, 3});
    PairwiseSpec f = potts(0.0);
    TbcaResult res = tbca(g, f, 2);
    double expect = 0;
    for (int p = 0; p < g.shape.pixels(); ++p)
      expect += *std::max_element(g.v.begin() + (size_t)p * 3, g.v.begin() + (size_t)p * 3 + 3);
    CHECK(res.dual_trace.front() == Catch::Approx(expect).margin(1e-9));
  }
  SECTION("single-row grids: first pass reaches the chain optimum, dual constant") {
    Rng rng(367);
    Volume g = testsup::random_volume(rng, {1, 6, 3});
    PairwiseSpec f = testsup::random_jump(rng);
    TbcaResult res = tbca(g, f, 4);
    ChainView chain = row_chain(g, f, 0, Dir::right);
    auto mm = oracle::brute_max_marginals(testsup::chain_graph(chain));
    double opt = *std::max_element(mm.begin(), mm.begin() + 3);
    for (double d : res.dual_trace) CHECK(d == Catch::Approx(opt).margin(1e-9));
  }
  SECTION("dual trace is monotone on random grids") {
    Rng rng(373);
    for (int rep = 0; rep < 10; ++rep) {
      Volume g = testsup::random_volume(rng, {5, 5, 3});
      PairwiseSpec f = rep % 2 ? testsup::random_jump(rng) : testsup::random_matrix(rng, 3);
      TbcaResult res = tbca(g, f, 10);
      for (size_t i = 1; i < res.dual_trace.size(); ++i)
        CHECK(res.dual_trace[i] >= res.dual_trace[i - 1] - 1e-9);
    }
  }
}

TEST_CASE("belief readout", "[inference]") {
  Volume b = make_volume(1, 1, 2, {0.0, std::log(3.0)});
  BeliefVolume B = read_beliefs(b);
  CHECK(B.at(0, 0, 0) == Catch::Approx(0.25));
  CHECK(B.at(0, 0, 1) == Catch::Approx(0.75));

  Volume b0 = make_volume(1, 1, 2, {0.0, 0.0});
  BeliefVolume B0 = read_beliefs(b0);
  CHECK(B0.at(0, 0, 0) == 0.5);
  CHECK(B0.at(0, 0, 1) == 0.5);

  Volume shifted = b;
  for (auto& v : shifted.v) v += 123.0;
  BeliefVolume Bs = read_beliefs(shifted);
  for (size_t i = 0; i < B.v.size(); ++i) CHECK(Bs.v[i] == Catch::Approx(B.v[i]).margin(1e-12));
}

TEST_CASE("winner takes all", "[inference]") {
  Volume onehot = make_volume(1, 2, 3, {0, 1, 0, 0, 0, 1});
  LabelMap w = wta(onehot);
  CHECK(w.v == std::vector<int32_t>{1, 2});

  Volume uniform_row({1, 1, 4}, 0.25);
  CHECK(wta(uniform_row).v == std::vector<int32_t>{0});

  Rng rng(379);
  Volume r = testsup::random_volume(rng, {2, 2, 3});
  LabelMap w2 = wta(r);
  for (int p = 0; p < 4; ++p) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (r.v[p * 3 + s] > r.v[p * 3 + best]) best = s;
    CHECK(w2.v[p] == best);
  }
}

TEST_CASE("normalization neutrality and determinism", "[inference]") {
  Rng rng(383);
  Volume g = testsup::random_volume(rng, {4, 5, 3});
  PairwiseSpec f = testsup::random_jump(rng);
  SweepTape on = sweep_bp_forward(g, f, {.normalize = true});
  SweepTape off = sweep_bp_forward(g, f, {.normalize = false});
  for (size_t i = 0; i < on.beliefs.v.size(); ++i)
    CHECK(on.beliefs.v[i] == Catch::Approx(off.beliefs.v[i]).margin(1e-9));

  SweepTape again = sweep_bp_forward(g, f, {.normalize = true});
  CHECK(on.beliefs.v == again.beliefs.v);
  for (int d = 0; d < 4; ++d) {
    CHECK(on.msg[d].v == again.msg[d].v);
    CHECK(on.arg[d] == again.arg[d]);
  }
}

TEST_CASE("argmax decisions are invariant to joint positive scaling", "[inference]") {
  Rng rng(389);
  Volume g = testsup::random_volume(rng, {3, 3, 3});
  oracle::perturb_ties(g.v, 390);
  JumpParams jp = testsup::random_jump(rng).jump();
  PairwiseSpec f{jp, std::nullopt};

  double c = 7.5;
  Volume gc = g;
  for (auto& v : gc.v) v *= c;
  JumpParams jc = jp;
  jc.p1_pos *= c;
  jc.p1_neg *= c;
  jc.p2_pos *= c;
  jc.p2_neg *= c;
  jc.p3 *= c;
  PairwiseSpec fc{jc, std::nullopt};

  SweepTape t1 = sweep_bp_forward(g, f);
  SweepTape t2 = sweep_bp_forward(gc, fc);
  for (int d = 0; d < 4; ++d) CHECK(t1.arg[d] == t2.arg[d]);
  CHECK(wta(t1.log_beliefs).v == wta(t2.log_beliefs).v);
}

TEST_CASE("threaded sweep matches the single-threaded result bitwise", "[inference]") {
  Rng rng(397);
  Volume g = testsup::random_volume(rng, {6, 7, 4});
  PairwiseSpec f = testsup::random_jump(rng);
  SweepTape a = sweep_bp_forward(g, f, {.threads = 1});
  SweepTape b = sweep_bp_forward(g, f, {.normalize = true, .threads = 3});
  CHECK(a.beliefs.v == b.beliefs.v);
  CHECK(a.log_beliefs.v == b.log_beliefs.v);

  Volume dB = testsup::random_volume(rng, g.shape);
  GradBundle g1 = sweep_bp_backward(a, dB, {.threads = 1});
  GradBundle g2 = sweep_bp_backward(b, dB, {.normalize = true, .threads = 3});
  CHECK(g1.d_unary.v == g2.d_unary.v);
}
