#include <catch2/catch_amalgamated.hpp>

#include "bpgrid/learning.hpp"
#include "bpgrid/oracle.hpp"
#include "support.hpp"

using namespace bpgrid;
using testsup::make_volume;

TEST_CASE("nll loss values and gradient", "[learning]") {
  SECTION("perfect beliefs give zero loss") {
    Volume B = make_volume(1, 2, 2, {1, 0, 0, 1});
    LabelMap gt(1, 2);
    gt.v = {0, 1};
    CHECK(nll_loss(B, gt).loss == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("single pixel at one half") {
    Volume B = make_volume(1, 1, 2, {0.5, 0.5});
    LabelMap gt(1, 1);
    gt.v = {0};
    NllResult r = nll_loss(B, gt);
    CHECK(r.loss == Catch::Approx(std::log(2.0)));
    CHECK(r.d_beliefs.v[0] == Catch::Approx(-2.0));
    CHECK(r.d_beliefs.v[1] == 0.0);
  }
  SECTION("invalid pixels are skipped; none valid raises") {
    Volume B = make_volume(1, 2, 2, {0.5, 0.5, 0.1, 0.9});
    LabelMap gt(1, 2);
    gt.v = {-1, 1};
    CHECK(nll_loss(B, gt).loss == Catch::Approx(-std::log(0.9)));
    gt.v = {-1, -1};
    CHECK_THROWS(nll_loss(B, gt));
  }
  SECTION("gradient matches finite differences through the belief readout") {
    Rng rng(401);
    Volume b = testsup::random_volume(rng, {2, 2, 3});
    LabelMap gt(2, 2);
    for (auto& v : gt.v) v = uniform_int(rng, 0, 2);
    BeliefVolume B = read_beliefs(b);
    NllResult r = nll_loss(B, gt);
    Volume db = softmax_backward(B, r.d_beliefs);
    auto loss = [&](const std::vector<double>& bv) {
      Volume bb = b;
      bb.v = bv;
      return nll_loss(read_beliefs(bb), gt).loss;
    };
    double err = oracle::fd_gradcheck(loss, b.v, db.v, oracle::axis_directions(b.v.size()));
    CHECK(err < 1e-4);
  }
  SECTION("invariant to permuting pixels") {
    Rng rng(403);
    Volume B({1, 4, 2});
    LabelMap gt(1, 4);
    for (int p = 0; p < 4; ++p) {
      double a = uniform(rng, 0.05, 0.95);
      B.v[p * 2] = a;
      B.v[p * 2 + 1] = 1 - a;
      gt.v[p] = uniform_int(rng, 0, 1);
    }
    Volume Bp({1, 4, 2});
    LabelMap gtp(1, 4);
    int perm[4] = {2, 0, 3, 1};
    for (int p = 0; p < 4; ++p) {
      Bp.v[p * 2] = B.v[perm[p] * 2];
      Bp.v[p * 2 + 1] = B.v[perm[p] * 2 + 1];
      gtp.v[p] = gt.v[perm[p]];
    }
    CHECK(nll_loss(B, gt).loss == Catch::Approx(nll_loss(Bp, gtp).loss).margin(1e-12));
  }
}

TEST_CASE("huber loss values and gradient", "[learning]") {
  Image gt(1, 1, 0.0);
  SECTION("zero residual") {
    Image y(1, 1, 0.0);
    CHECK(huber_loss(y, gt, 1.0).loss == 0.0);
  }
  SECTION("printed formula values") {
    Image y(1, 1, 0.5);
    CHECK(huber_loss(y, gt, 1.0).loss == Catch::Approx(0.125));
    y.v[0] = 2.0;
    CHECK(huber_loss(y, gt, 1.0).loss == Catch::Approx(1.5));
  }
  SECTION("gradient is continuous at the knee") {
    Image y(1, 1, 1.0 - 1e-9);
    double inside = huber_loss(y, gt, 1.0).d_y.v[0];
    y.v[0] = 1.0 + 1e-9;
    double outside = huber_loss(y, gt, 1.0).d_y.v[0];
    CHECK(inside == Catch::Approx(outside).margin(1e-8));
    CHECK(outside == Catch::Approx(1.0).margin(1e-8));
  }
  SECTION("masked pixels; none valid raises") {
    Image y(1, 2, 3.0);
    Image g2(1, 2, 0.0);
    g2.v[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK(huber_loss(y, g2, 1.0).loss == Catch::Approx(2.5));
    g2.v[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(huber_loss(y, g2, 1.0));
  }
  SECTION("gradient matches finite differences") {
    Rng rng(407);
    Image y(2, 2);
    Image g2(2, 2);
    for (int i = 0; i < 4; ++i) {
      y.v[i] = uniform(rng, -3, 3);
      g2.v[i] = uniform(rng, -3, 3);
    }
    HuberResult r = huber_loss(y, g2, 0.7);
    auto loss = [&](const std::vector<double>& yv) {
      Image yy = y;
      yy.v = yv;
      return huber_loss(yy, g2, 0.7).loss;
    };
    double err = oracle::fd_gradcheck(loss, y.v, r.d_y.v, oracle::axis_directions(4));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("window-average refinement", "[learning]") {
  SECTION("one-hot beliefs return the hot label") {
    Volume B({1, 1, 8}, 0.0);
    B.at(0, 0, 5) = 1.0;
    CHECK(refine_basic(B, 3).y.v[0] == Catch::Approx(5.0));
  }
  SECTION("two-label tie averages the window") {
    Volume B({1, 1, 8}, 0.0);
    B.at(0, 0, 4) = 0.5;
    B.at(0, 0, 5) = 0.5;
    RefineTape t = refine_basic(B, 3);
    CHECK(t.argmax.v[0] == 4);
    CHECK(t.y.v[0] == Catch::Approx(4.5));
  }
  SECTION("uniform beliefs clip the window at the boundary") {
    Volume B({1, 1, 8}, 0.125);
    RefineTape t = refine_basic(B, 3);
    CHECK(t.argmax.v[0] == 0);
    CHECK(t.y.v[0] == Catch::Approx(1.5));
  }
  SECTION("output stays inside the window's label range") {
    Rng rng(409);
    for (int rep = 0; rep < 20; ++rep) {
      Volume b = testsup::random_volume(rng, {1, 1, 9});
      BeliefVolume B = read_beliefs(b);
      RefineTape t = refine_basic(B, 2);
      int dhat = t.argmax.v[0];
      CHECK(t.y.v[0] >= std::max(0, dhat - 2));
      CHECK(t.y.v[0] <= std::min(8, dhat + 2));
    }
  }
  SECTION("backward matches finite differences") {
    Rng rng(411);
    Volume b = testsup::random_volume(rng, {2, 2, 6});
    oracle::perturb_ties(b.v, 412);
    BeliefVolume B = read_beliefs(b);
    RefineTape tape = refine_basic(B, 2);
    Image dy(2, 2);
    for (auto& v : dy.v) v = uniform(rng, -1, 1);
    Volume dB = refine_backward(tape, B.shape, dy);
    auto loss = [&](const std::vector<double>& Bv) {
      Volume BB = B;
      BB.v = Bv;
      RefineTape t = refine_basic(BB, 2);
      double l = 0;
      for (int i = 0; i < 4; ++i) l += dy.v[i] * t.y.v[i];
      return l;
    };
    double err = oracle::fd_gradcheck(loss, B.v, dB.v, oracle::axis_directions(B.v.size()));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("deep supervision combines losses with equal weights", "[learning]") {
  TrainConfig cfg;
  SECTION("one level, no refinement, equals the nll") {
    Volume B = make_volume(1, 1, 2, {0.25, 0.75});
    LabelMap gt(1, 1);
    gt.v = {1};
    DeepSupervisionResult r = deep_supervised_loss({B}, {gt}, nullptr, nullptr, cfg);
    CHECK(r.loss == Catch::Approx(nll_loss(B, gt).loss));
  }
  SECTION("all components zero") {
    Volume B = make_volume(1, 1, 2, {0, 1});
    LabelMap gt(1, 1);
    gt.v = {1};
    Image y(1, 1, 5.0), gty(1, 1, 5.0);
    DeepSupervisionResult r = deep_supervised_loss({B, B}, {gt, gt}, &y, &gty, cfg);
    CHECK(r.loss == Catch::Approx(0.0).margin(1e-12));
    CHECK(r.d_refined.v[0] == 0.0);
  }
  SECTION("known component values sum") {
    Volume B1 = make_volume(1, 1, 2, {std::exp(-0.3), 1 - std::exp(-0.3)});
    Volume B2 = make_volume(1, 1, 2, {std::exp(-0.5), 1 - std::exp(-0.5)});
    LabelMap gt(1, 1);
    gt.v = {0};
    Image y(1, 1, std::sqrt(0.4)), gty(1, 1, 0.0);  // huber term = r^2/2 = 0.2
    DeepSupervisionResult r = deep_supervised_loss({B1, B2}, {gt, gt}, &y, &gty, cfg);
    CHECK(r.loss == Catch::Approx(1.0));
  }
}

TEST_CASE("prediction metrics", "[learning]") {
  SECTION("perfect prediction") {
    Image p(2, 2, 3.0), g(2, 2, 3.0);
    DisparityMetrics m = disparity_metrics(p, g);
    CHECK(m.bad1 == 0.0);
    CHECK(m.bad2 == 0.0);
    CHECK(m.bad3 == 0.0);
    CHECK(m.mae == 0.0);
  }
  SECTION("single pixel off by 2.5") {
    Image p(1, 1, 2.5), g(1, 1, 0.0);
    DisparityMetrics m = disparity_metrics(p, g);
    CHECK(m.bad1 == 100.0);
    CHECK(m.bad2 == 100.0);
    CHECK(m.bad3 == 0.0);
    CHECK(m.mae == Catch::Approx(2.5));
  }
  SECTION("badX is monotone non-increasing in X") {
    Rng rng(419);
    Image p(4, 4), g(4, 4, 0.0);
    for (auto& v : p.v) v = uniform(rng, -6, 6);
    DisparityMetrics m = disparity_metrics(p, g);
    CHECK(m.bad1 >= m.bad2);
    CHECK(m.bad2 >= m.bad3);
  }
  SECTION("endpoint error of a 3-4-5 flow error") {
    Image u1(1, 1, 3.0), u2(1, 1, 4.0), g1(1, 1, 0.0), g2(1, 1, 0.0);
    CHECK(endpoint_error(u1, u2, g1, g2) == Catch::Approx(5.0));
  }
  SECTION("no valid pixels raises") {
    Image p(1, 1, 0.0), g(1, 1, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS(disparity_metrics(p, g));
  }
}

namespace {

StereoSample shifted_sample(Rng& rng, int h, int w, int disp) {
  Image right(h, w);
  for (auto& v : right.v) v = uniform(rng, 0, 1);
  Image left(h, w), gt(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = std::max(x - disp, 0);
      left.at(y, x) = right.at(y, sx);
      gt.at(y, x) = disp;
    }
  return {left, right, gt};
}

}  // namespace

TEST_CASE("toy training", "[learning]") {
  SECTION("zero learning rate leaves parameters unchanged") {
    Rng rng(421);
    StereoPipeline pipe;
    pipe.levels = 2;
    pipe.max_disp = 3;
    pipe.census_window = 3;
    pipe.temperature.t = 2.0;
    pipe.jump.assign(2, JumpParams{0.1, 0.1, 0.2, 0.2, 0.3, std::nullopt});
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.steps = 3;
    TrainTrace trace = train_toy(pipe, {shifted_sample(rng, 8, 8, 2)}, cfg);
    CHECK(pipe.temperature.t == 2.0);
    CHECK(pipe.jump[0].p3 == 0.3);
    CHECK(trace.loss[0] == Catch::Approx(trace.loss[2]).margin(1e-12));
  }
  SECTION("single-pixel problem: temperature grows, loss decays to zero") {
    Volume q = make_volume(1, 1, 2, {0.2, 0.8});
    LabelMap gt(1, 1);
    gt.v = {1};
    double T = 0.5, lr = 2.0;
    std::vector<double> losses;
    for (int it = 0; it < 60; ++it) {
      UnaryVolume g = apply_temperature(q, Temperature{T});
      BeliefVolume B = read_beliefs(g);
      NllResult r = nll_loss(B, gt);
      losses.push_back(r.loss);
      Volume dg = softmax_backward(B, r.d_beliefs);
      double dT = 0;
      for (size_t i = 0; i < q.v.size(); ++i) dT += dg.v[i] * q.v[i];
      T -= lr * dT;
    }
    CHECK(T > 0.5);
    for (size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1] + 1e-12);
    CHECK(losses.back() < 0.05);
  }
  SECTION("a few steps reduce the loss on a shifted pair") {
    Rng rng(431);
    StereoPipeline pipe;
    pipe.levels = 1;
    pipe.max_disp = 7;
    pipe.census_window = 3;
    pipe.temperature.t = 1.0;
    pipe.jump.assign(1, JumpParams{});
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.steps = 10;
    TrainTrace trace = train_toy(pipe, {shifted_sample(rng, 12, 16, 3)}, cfg);
    CHECK(trace.loss.back() < trace.loss.front());
  }
}
