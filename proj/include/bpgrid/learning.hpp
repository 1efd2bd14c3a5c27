#pragma once

#include <stdexcept>
#include <string>

#include "bpgrid/core.hpp"
#include "bpgrid/grid.hpp"
#include "bpgrid/inference.hpp"
#include "bpgrid/matching.hpp"
#include "bpgrid/pyramid.hpp"

namespace bpgrid {

struct TrainConfig {
  double learning_rate = 0.05;
  int steps = 200;
  double huber_delta = 1.0;
  int refine_tau = 3;
  uint64_t seed = 0;
};

struct NllResult {
  double loss = 0.0;
  Volume d_beliefs;
};

// Mean negative log-likelihood of the ground-truth labels under the beliefs.
// Negative gt labels are invalid and skipped; beliefs are clamped at 1e-12
// before the log.
inline NllResult nll_loss(const BeliefVolume& beliefs, const LabelMap& gt) {
  int L = beliefs.shape.labels;
  NllResult res;
  res.d_beliefs = Volume(beliefs.shape);
  int valid = 0;
  for (int p = 0; p < beliefs.shape.pixels(); ++p)
    if (gt.v[p] >= 0) valid++;
  if (valid == 0) throw std::runtime_error("nll_loss: no valid ground-truth pixels");
  for (int p = 0; p < beliefs.shape.pixels(); ++p) {
    int32_t d = gt.v[p];
    if (d < 0) continue;
    assert(d < L);
    double b = std::max(beliefs.v[(size_t)p * L + d], 1e-12);
    res.loss -= std::log(b);
    res.d_beliefs.v[(size_t)p * L + d] = -1.0 / (valid * b);
  }
  res.loss /= valid;
  return res;
}

struct HuberResult {
  double loss = 0.0;
  Image d_y;
};

// Mean Huber penalty of y against gt; NaN gt entries are invalid.
inline HuberResult huber_loss(const Image& y, const Image& gt, double delta) {
  assert(delta > 0);
  HuberResult res;
  res.d_y = Image(y.height, y.width, 0.0);
  int valid = 0;
  for (size_t i = 0; i < y.v.size(); ++i)
    if (std::isfinite(gt.v[i])) valid++;
  if (valid == 0) throw std::runtime_error("huber_loss: no valid ground-truth pixels");
  for (size_t i = 0; i < y.v.size(); ++i) {
    if (!std::isfinite(gt.v[i])) continue;
    double r = y.v[i] - gt.v[i];
    if (std::abs(r) <= delta) {
      res.loss += r * r / (2.0 * delta);
      res.d_y.v[i] = r / delta / valid;
    } else {
      res.loss += std::abs(r) - delta / 2.0;
      res.d_y.v[i] = (r > 0 ? 1.0 : -1.0) / valid;
    }
  }
  res.loss /= valid;
  return res;
}

struct RefineTape {
  LabelMap argmax;  // window centers
  Image denom;
  Image y;
  int tau = 3;
};

// Sub-pixel readout: probability-weighted label average in a window of
// half-width tau around the belief argmax, clipped at the label range.
inline RefineTape refine_basic(const BeliefVolume& beliefs, int tau = 3) {
  assert(tau >= 1);
  int L = beliefs.shape.labels;
  RefineTape tape;
  tape.tau = tau;
  tape.argmax = wta(beliefs);
  tape.denom = Image(beliefs.shape.height, beliefs.shape.width);
  tape.y = Image(beliefs.shape.height, beliefs.shape.width);
  for (int p = 0; p < beliefs.shape.pixels(); ++p) {
    int dhat = tape.argmax.v[p];
    int lo = std::max(0, dhat - tau), hi = std::min(L - 1, dhat + tau);
    double num = 0.0, den = 0.0;
    for (int d = lo; d <= hi; ++d) {
      double b = beliefs.v[(size_t)p * L + d];
      num += d * b;
      den += b;
    }
    tape.denom.v[p] = den;
    tape.y.v[p] = num / den;
  }
  return tape;
}

// Backward of refine_basic with the window center treated as constant:
// dy/dB(d) = (d - y) / denom inside the window.
inline Volume refine_backward(const RefineTape& tape, GridShape shape, const Image& d_y) {
  Volume out(shape);
  int L = shape.labels;
  for (int p = 0; p < shape.pixels(); ++p) {
    double dy = d_y.v[p];
    if (dy == 0.0) continue;
    int dhat = tape.argmax.v[p];
    int lo = std::max(0, dhat - tape.tau), hi = std::min(L - 1, dhat + tape.tau);
    for (int d = lo; d <= hi; ++d)
      out.v[(size_t)p * L + d] = dy * (d - tape.y.v[p]) / tape.denom.v[p];
  }
  return out;
}

struct DeepSupervisionResult {
  double loss = 0.0;
  std::vector<Volume> d_beliefs;  // per level
  Image d_refined;                // empty when no refined output was given
};

// Equal-weight sum of per-level NLL losses plus an optional Huber term on the
// refined continuous output.
inline DeepSupervisionResult deep_supervised_loss(const std::vector<BeliefVolume>& beliefs,
                                                  const std::vector<LabelMap>& gt,
                                                  const Image* refined_y, const Image* gt_y,
                                                  const TrainConfig& cfg) {
  assert(beliefs.size() == gt.size() && !beliefs.empty());
  DeepSupervisionResult res;
  for (size_t l = 0; l < beliefs.size(); ++l) {
    NllResult nll = nll_loss(beliefs[l], gt[l]);
    res.loss += nll.loss;
    res.d_beliefs.push_back(std::move(nll.d_beliefs));
  }
  if (refined_y) {
    assert(gt_y);
    HuberResult h = huber_loss(*refined_y, *gt_y, cfg.huber_delta);
    res.loss += h.loss;
    res.d_refined = std::move(h.d_y);
  }
  return res;
}

struct DisparityMetrics {
  double bad1 = 0.0, bad2 = 0.0, bad3 = 0.0;  // percent
  double mae = 0.0;
};

// badX percentages and mean absolute error over pixels with finite gt.
inline DisparityMetrics disparity_metrics(const Image& pred, const Image& gt) {
  assert(pred.height == gt.height && pred.width == gt.width);
  DisparityMetrics m;
  int valid = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    if (!std::isfinite(gt.v[i])) continue;
    valid++;
    double e = std::abs(pred.v[i] - gt.v[i]);
    m.mae += e;
    if (e > 1.0) m.bad1++;
    if (e > 2.0) m.bad2++;
    if (e > 3.0) m.bad3++;
  }
  if (valid == 0) throw std::runtime_error("metrics: no valid ground-truth pixels");
  m.mae /= valid;
  m.bad1 *= 100.0 / valid;
  m.bad2 *= 100.0 / valid;
  m.bad3 *= 100.0 / valid;
  return m;
}

// Mean Euclidean norm of the flow error over pixels where both gt channels
// are finite.
inline double endpoint_error(const Image& u1, const Image& u2, const Image& gt1,
                             const Image& gt2) {
  double epe = 0.0;
  int valid = 0;
  for (size_t i = 0; i < u1.v.size(); ++i) {
    if (!std::isfinite(gt1.v[i]) || !std::isfinite(gt2.v[i])) continue;
    valid++;
    double e1 = u1.v[i] - gt1.v[i], e2 = u2.v[i] - gt2.v[i];
    epe += std::sqrt(e1 * e1 + e2 * e2);
  }
  if (valid == 0) throw std::runtime_error("endpoint_error: no valid ground-truth pixels");
  return epe / valid;
}

struct StereoSample {
  Image left, right;
  Image gt_disparity;  // NaN = invalid
};

// Learnable pieces of the desk-scale stereo pipeline: one temperature shared
// across levels, one set of jump penalties per level.
struct StereoPipeline {
  int levels = 3;
  int max_disp = 15;  // labels = max_disp + 1
  int census_window = 5;
  double weight_beta = -1.0;  // >= 0: edge-aware weights from the left image
  Temperature temperature{1.0};
  std::vector<JumpParams> jump;
  bool refine = false;  // add the Huber term on the refined output

  void init_levels() {
    if ((int)jump.size() != levels) jump.resize(levels, jump.empty() ? JumpParams{} : jump.back());
  }
};

struct StereoForward {
  std::vector<Volume> q;            // per level, coarse first
  std::vector<PairwiseSpec> specs;  // per level
  HierTape hier;
  std::vector<LabelMap> gt_labels;  // per level
};

namespace detail {

inline LabelMap quantize_gt(const Image& gt, int scale, int labels) {
  LabelMap out(gt.height, gt.width, -1);
  for (size_t i = 0; i < gt.v.size(); ++i) {
    if (!std::isfinite(gt.v[i])) continue;
    int d = (int)std::lround(gt.v[i] / scale);
    if (d < 0 || d >= labels) continue;  // outside the level's range
    out.v[i] = d;
  }
  return out;
}

}  // namespace detail

// Matching front-end plus hierarchical sweep BP for one stereo sample.
// Levels are built coarse-first so run_hierarchy can consume them directly.
inline StereoForward stereo_forward(const StereoPipeline& pipe, const StereoSample& sample,
                                    const InferOptions& opts = {}) {
  StereoForward fwd;
  std::vector<Image> lefts = build_levels(sample.left, pipe.levels);
  std::vector<Image> rights = build_levels(sample.right, pipe.levels);
  std::vector<Image> gts = build_levels(sample.gt_disparity, pipe.levels);
  int labels0 = pipe.max_disp + 1;

  for (int l = pipe.levels - 1; l >= 0; --l) {  // coarse first
    int labels = labels0 >> l;
    if (labels < 2) throw std::runtime_error("stereo_forward: too few labels at coarse level");
    FeatureMap f0 = census_features(lefts[l], pipe.census_window);
    FeatureMap f1 = census_features(rights[l], pipe.census_window);
    fwd.q.push_back(stereo_unaries(f0, f1, labels - 1));
    PairwiseSpec spec{pipe.jump[l], std::nullopt};
    if (pipe.weight_beta >= 0)
      spec.jump().per_pixel_weights = weights_from_image(lefts[l], pipe.weight_beta);
    fwd.specs.push_back(std::move(spec));
    fwd.gt_labels.push_back(detail::quantize_gt(gts[l], 1 << l, labels));
  }
  std::vector<const PairwiseSpec*> spec_ptrs;
  for (const auto& s : fwd.specs) spec_ptrs.push_back(&s);
  fwd.hier = run_hierarchy(fwd.q, spec_ptrs, pipe.temperature, opts);
  return fwd;
}

struct TrainTrace {
  std::vector<double> loss;  // one entry per step
};

// Plain gradient descent on the temperature and the per-level jump penalties.
// Full-batch; pairwise magnitudes are clamped to be non-negative after every
// step and the temperature kept strictly positive.
inline TrainTrace train_toy(StereoPipeline& pipe, const std::vector<StereoSample>& data,
                            const TrainConfig& cfg, const InferOptions& opts = {}) {
  if (data.empty()) throw std::runtime_error("train_toy: empty dataset");
  pipe.init_levels();
  TrainTrace trace;

  for (int step = 0; step < cfg.steps; ++step) {
    double total = 0.0;
    double d_T = 0.0;
    std::vector<JumpGrad> d_jump(pipe.levels);

    for (const StereoSample& sample : data) {
      StereoForward fwd = stereo_forward(pipe, sample, opts);
      std::vector<BeliefVolume> beliefs;
      for (const auto& t : fwd.hier.bp) beliefs.push_back(t.beliefs);

      RefineTape refined;
      DeepSupervisionResult ds;
      if (pipe.refine) {
        refined = refine_basic(beliefs.back(), cfg.refine_tau);
        ds = deep_supervised_loss(beliefs, fwd.gt_labels, &refined.y, &sample.gt_disparity,
                                  cfg);
      } else {
        ds = deep_supervised_loss(beliefs, fwd.gt_labels, nullptr, nullptr, cfg);
      }
      total += ds.loss;

      if (pipe.refine)
        detail::add_into(ds.d_beliefs.back(),
                         refine_backward(refined, beliefs.back().shape, ds.d_refined));
      HierGrads hg = run_hierarchy_backward(fwd.hier, ds.d_beliefs, opts);
      d_T += hg.d_temperature;
      for (int l = 0; l < pipe.levels; ++l) d_jump[l].accumulate(hg.d_pairwise[l].jump());
    }

    total /= data.size();
    if (!std::isfinite(total))
      throw std::runtime_error("train_toy: non-finite loss at step " + std::to_string(step));
    trace.loss.push_back(total);

    double lr = cfg.learning_rate / data.size();
    pipe.temperature.t = std::max(pipe.temperature.t - lr * d_T, 1e-6);
    for (int l = 0; l < pipe.levels; ++l) {
      JumpParams& jp = pipe.jump[l];
      const JumpGrad& jg = d_jump[l];
      jp.p1_pos -= lr * jg.p1_pos;
      jp.p1_neg -= lr * jg.p1_neg;
      jp.p2_pos -= lr * jg.p2_pos;
      jp.p2_neg -= lr * jg.p2_neg;
      jp.p3 -= lr * jg.p3;
      jp.clamp_nonnegative();
    }
  }
  return trace;
}

}  // namespace bpgrid
