#pragma once

#include <stdexcept>
#include <vector>

#include "bpgrid/core.hpp"
#include "bpgrid/grid.hpp"
#include "bpgrid/inference.hpp"

namespace bpgrid {

// Image pyramid by 2x2 average pooling, finest first. Spatial dimensions must
// stay halvable for the requested depth.
inline std::vector<Image> build_levels(const Image& img, int num_levels) {
  assert(num_levels >= 1);
  int need = 1 << (num_levels - 1);
  if (img.height < need || img.width < need)
    throw std::runtime_error("build_levels: image smaller than the pyramid depth");
  std::vector<Image> out{img};
  for (int l = 1; l < num_levels; ++l) {
    const Image& prev = out.back();
    if (prev.height % 2 || prev.width % 2)
      throw std::runtime_error("build_levels: odd dimension, cannot halve");
    Image next(prev.height / 2, prev.width / 2);
    for (int y = 0; y < next.height; ++y)
      for (int x = 0; x < next.width; ++x)
        next.at(y, x) = 0.25 * (prev.at(2 * y, 2 * x) + prev.at(2 * y, 2 * x + 1) +
                                prev.at(2 * y + 1, 2 * x) + prev.at(2 * y + 1, 2 * x + 1));
    out.push_back(std::move(next));
  }
  return out;
}

// Probability-volume pyramid: 2x2 spatial average pooling plus label halving
// by summing adjacent label pairs (mass-preserving), finest first.
inline std::vector<Volume> build_levels(const Volume& q, int num_levels) {
  assert(num_levels >= 1);
  std::vector<Volume> out{q};
  for (int l = 1; l < num_levels; ++l) {
    const Volume& prev = out.back();
    GridShape ps = prev.shape;
    if (ps.height % 2 || ps.width % 2 || ps.labels % 2)
      throw std::runtime_error("build_levels: odd dimension, cannot halve");
    Volume next({ps.height / 2, ps.width / 2, ps.labels / 2});
    for (int y = 0; y < next.shape.height; ++y)
      for (int x = 0; x < next.shape.width; ++x)
        for (int s = 0; s < next.shape.labels; ++s) {
          double acc = 0.0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              for (int ds = 0; ds < 2; ++ds)
                acc += prev.at(2 * y + dy, 2 * x + dx, 2 * s + ds);
          next.at(y, x, s) = 0.25 * acc;
        }
    out.push_back(std::move(next));
  }
  return out;
}

namespace detail {

struct LinTerm {
  int idx;
  double w;
};

// 1-D interpolation stencil for the spatial axes, align-corners-false:
// fine sample i sits at coarse coordinate (i + 0.5)/2 - 0.5, clamped.
inline void spatial_stencil(int fine, int coarse_n, LinTerm out[2]) {
  double c = (fine + 0.5) / 2.0 - 0.5;
  c = std::max(0.0, std::min(c, (double)(coarse_n - 1)));
  int lo = (int)std::floor(c);
  int hi = std::min(lo + 1, coarse_n - 1);
  double frac = c - lo;
  out[0] = {lo, 1.0 - frac};
  out[1] = {hi, frac};
}

// Label axis: coarse label k maps to fine position 2k, so fine label l reads
// coarse coordinate l/2; out-of-range fine labels clamp to the last sample.
inline void label_stencil(int fine, int coarse_n, LinTerm out[2]) {
  double c = fine / 2.0;
  c = std::min(c, (double)(coarse_n - 1));
  int lo = (int)std::floor(c);
  int hi = std::min(lo + 1, coarse_n - 1);
  double frac = c - lo;
  out[0] = {lo, 1.0 - frac};
  out[1] = {hi, frac};
}

}  // namespace detail

// The pure linear part of belief upsampling: trilinear interpolation doubling
// each spatial axis, label axis per the 2k mapping. fine_labels may be 2*Lc
// or 2*Lc - 1 (odd label counts arise for flow windows).
inline Volume upsample_linear(const Volume& coarse, int fine_labels = -1) {
  GridShape cs = coarse.shape;
  if (fine_labels < 0) fine_labels = 2 * cs.labels;
  if (fine_labels != 2 * cs.labels && fine_labels != 2 * cs.labels - 1)
    throw std::runtime_error("upsample_linear: fine label count must double");
  GridShape fs{2 * cs.height, 2 * cs.width, fine_labels};
  Volume fine(fs);
  detail::LinTerm wy[2], wx[2], ws[2];
  for (int y = 0; y < fs.height; ++y) {
    detail::spatial_stencil(y, cs.height, wy);
    for (int x = 0; x < fs.width; ++x) {
      detail::spatial_stencil(x, cs.width, wx);
      for (int s = 0; s < fs.labels; ++s) {
        detail::label_stencil(s, cs.labels, ws);
        double acc = 0.0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
              acc += wy[a].w * wx[b].w * ws[c].w *
                     coarse.at(wy[a].idx, wx[b].idx, ws[c].idx);
        fine.at(y, x, s) = acc;
      }
    }
  }
  return fine;
}

// Exact transpose of upsample_linear.
inline Volume upsample_linear_adjoint(const Volume& d_fine, GridShape coarse_shape) {
  GridShape fs = d_fine.shape;
  Volume out(coarse_shape);
  detail::LinTerm wy[2], wx[2], ws[2];
  for (int y = 0; y < fs.height; ++y) {
    detail::spatial_stencil(y, coarse_shape.height, wy);
    for (int x = 0; x < fs.width; ++x) {
      detail::spatial_stencil(x, coarse_shape.width, wx);
      for (int s = 0; s < fs.labels; ++s) {
        detail::label_stencil(s, coarse_shape.labels, ws);
        double g = d_fine.at(y, x, s);
        if (g == 0.0) continue;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c)
              out.at(wy[a].idx, wx[b].idx, ws[c].idx) += wy[a].w * wx[b].w * ws[c].w * g;
      }
    }
  }
  return out;
}

struct UpsampleTape {
  GridShape coarse_shape;
  BeliefVolume out;
  std::vector<double> rowsum;  // per fine pixel, pre-renormalization
};

// Belief upsampling: linear interpolation followed by per-pixel
// renormalization so the result is again a distribution.
inline UpsampleTape upsample_beliefs(const BeliefVolume& coarse, int fine_labels = -1) {
  UpsampleTape tape;
  tape.coarse_shape = coarse.shape;
  Volume lin = upsample_linear(coarse, fine_labels);
  int L = lin.shape.labels;
  tape.rowsum.resize(lin.shape.pixels());
  for (int p = 0; p < lin.shape.pixels(); ++p) {
    double sum = 0.0;
    for (int s = 0; s < L; ++s) sum += lin.v[(size_t)p * L + s];
    tape.rowsum[p] = sum;
    for (int s = 0; s < L; ++s) lin.v[(size_t)p * L + s] /= sum;
  }
  tape.out = std::move(lin);
  return tape;
}

inline Volume upsample_beliefs_backward(const UpsampleTape& tape, const Volume& d_out) {
  int L = d_out.shape.labels;
  Volume d_lin(d_out.shape);
  for (int p = 0; p < d_out.shape.pixels(); ++p) {
    const double* dy = d_out.v.data() + (size_t)p * L;
    const double* y = tape.out.v.data() + (size_t)p * L;
    double dot = 0.0;
    for (int s = 0; s < L; ++s) dot += dy[s] * y[s];
    for (int s = 0; s < L; ++s)
      d_lin.v[(size_t)p * L + s] = (dy[s] - dot) / tape.rowsum[p];
  }
  return upsample_linear_adjoint(d_lin, tape.coarse_shape);
}

// g = T (q + B_up); the coarsest level passes a zero B_up.
inline UnaryVolume combine_level(const Volume& q, const Volume& b_up, Temperature t) {
  assert(q.shape == b_up.shape);
  UnaryVolume g(q.shape);
  for (size_t i = 0; i < q.v.size(); ++i) g.v[i] = t.t * (q.v[i] + b_up.v[i]);
  return g;
}

struct HierTape {
  std::vector<SweepTape> bp;         // per level, coarse first
  std::vector<UpsampleTape> up;      // transitions, up[l] feeds level l+1
  std::vector<Volume> combined;      // q + B_up per level (coarsest: q)
  Temperature temperature;
};

struct HierGrads {
  std::vector<Volume> d_q;
  std::vector<PairwiseGrad> d_pairwise;
  double d_temperature = 0.0;
};

// Coarse-to-fine sweep BP: the coarsest level runs on T*q, every finer level
// on T*(q + upsampled coarser beliefs). All tapes are kept so the whole stack
// backpropagates, including through the upsampling.
inline HierTape run_hierarchy(const std::vector<Volume>& q_levels,
                              const std::vector<const PairwiseSpec*>& specs, Temperature t,
                              const InferOptions& opts = {}) {
  assert(!q_levels.empty() && q_levels.size() == specs.size());
  HierTape tape;
  tape.temperature = t;
  for (size_t l = 0; l < q_levels.size(); ++l) {
    Volume input;
    if (l == 0) {
      input = q_levels[0];
    } else {
      tape.up.push_back(upsample_beliefs(tape.bp[l - 1].beliefs, q_levels[l].shape.labels));
      if (tape.up.back().out.shape != q_levels[l].shape)
        throw std::runtime_error("run_hierarchy: level shapes do not halve cleanly");
      input = q_levels[l];
      detail::add_into(input, tape.up.back().out);
    }
    UnaryVolume g = apply_temperature(input, t);
    tape.combined.push_back(std::move(input));
    tape.bp.push_back(sweep_bp_forward(g, *specs[l], opts));
  }
  return tape;
}

// Reverse pass over the hierarchy, finest level first. d_beliefs holds the
// external gradient per level (deep supervision); the inter-level coupling
// through the upsampling is added internally.
inline HierGrads run_hierarchy_backward(const HierTape& tape,
                                        const std::vector<Volume>& d_beliefs,
                                        const InferOptions& opts = {}) {
  int levels = (int)tape.bp.size();
  assert((int)d_beliefs.size() == levels);
  HierGrads out;
  out.d_q.resize(levels);
  double t = tape.temperature.t;

  std::vector<Volume> db = d_beliefs;
  for (int l = levels - 1; l >= 0; --l) {
    GradBundle gb = sweep_bp_backward(tape.bp[l], db[l], opts);
    for (size_t i = 0; i < gb.d_unary.v.size(); ++i)
      out.d_temperature += gb.d_unary.v[i] * tape.combined[l].v[i];
    Volume d_input(gb.d_unary.shape);
    for (size_t i = 0; i < d_input.v.size(); ++i) d_input.v[i] = t * gb.d_unary.v[i];
    if (l > 0) {
      Volume d_coarse = upsample_beliefs_backward(tape.up[l - 1], d_input);
      detail::add_into(db[l - 1], d_coarse);
    }
    out.d_q[l] = std::move(d_input);
    out.d_pairwise.insert(out.d_pairwise.begin(), std::move(gb.d_pairwise));
  }
  return out;
}

}  // namespace bpgrid
