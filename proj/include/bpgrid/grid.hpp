#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <variant>

#include "bpgrid/core.hpp"

namespace bpgrid {

// Direction a message travels: Dir::right is the left-to-right sweep, i.e.
// the sender pixel is the left endpoint of the edge.
enum class Dir : int { left = 0, right = 1, up = 2, down = 3 };

inline int dir_index(Dir d) { return (int)d; }

inline int dir_dx(Dir d) { return d == Dir::right ? 1 : d == Dir::left ? -1 : 0; }
inline int dir_dy(Dir d) { return d == Dir::down ? 1 : d == Dir::up ? -1 : 0; }

struct Pixel {
  int y = 0;
  int x = 0;
};

// Truncated asymmetric jump penalties. Stored as non-negative magnitudes and
// applied as negative scores: f = -w * theta(t - s) with
//   theta(0) = 0, theta(+1) = p1_pos, theta(-1) = p1_neg,
//   theta(+2) = p2_pos, theta(-2) = p2_neg, theta(|d| >= 3) = p3.
// Optional per-pixel weights, one H×W map per direction, indexed by the
// sender pixel of the edge.
struct JumpParams {
  double p1_pos = 0.0;
  double p1_neg = 0.0;
  double p2_pos = 0.0;
  double p2_neg = 0.0;
  double p3 = 0.0;
  std::optional<std::array<Image, 4>> per_pixel_weights;  // indexed by dir_index

  double theta(int delta) const {
    switch (delta) {
      case 0: return 0.0;
      case 1: return p1_pos;
      case -1: return p1_neg;
      case 2: return p2_pos;
      case -2: return p2_neg;
      default: return p3;
    }
  }

  double weight(Pixel p, Dir d) const {
    if (!per_pixel_weights) return 1.0;
    return (*per_pixel_weights)[dir_index(d)].at(p.y, p.x);
  }

  void clamp_nonnegative() {
    p1_pos = std::max(p1_pos, 0.0);
    p1_neg = std::max(p1_neg, 0.0);
    p2_pos = std::max(p2_pos, 0.0);
    p2_neg = std::max(p2_neg, 0.0);
    p3 = std::max(p3, 0.0);
  }
};

// Full non-symmetric L×L score matrix per grid axis. One matrix serves both
// directions of an axis: the transposed lookup realizes the opposite
// direction, so upward and downward jumps can score differently.
struct CompatMatrix {
  int labels = 0;
  std::vector<double> horizontal;  // L×L, row = source label
  std::vector<double> vertical;

  CompatMatrix() = default;
  CompatMatrix(int l, double fill = 0.0)
      : labels(l), horizontal((size_t)l * l, fill), vertical((size_t)l * l, fill) {}

  double& h(int s, int t) { return horizontal[(size_t)s * labels + t]; }
  double h(int s, int t) const { return horizontal[(size_t)s * labels + t]; }
  double& vert(int s, int t) { return vertical[(size_t)s * labels + t]; }
  double vert(int s, int t) const { return vertical[(size_t)s * labels + t]; }

  void clamp_nonnegative() {
    for (auto& e : horizontal) e = std::max(e, 0.0);
    for (auto& e : vertical) e = std::max(e, 0.0);
  }
};

// Pairwise score model f_ij(s, t): either the truncated jump function or the
// full matrix pair. edge_weights is an optional per-edge scale (used by the
// segmentation driver to make matrix scores image-adaptive); absent means 1.
struct PairwiseSpec {
  std::variant<JumpParams, CompatMatrix> model;
  std::optional<std::array<Image, 4>> edge_weights;

  bool is_jump() const { return std::holds_alternative<JumpParams>(model); }
  const JumpParams& jump() const { return std::get<JumpParams>(model); }
  JumpParams& jump() { return std::get<JumpParams>(model); }
  const CompatMatrix& matrix() const { return std::get<CompatMatrix>(model); }
  CompatMatrix& matrix() { return std::get<CompatMatrix>(model); }

  double edge_weight(Pixel p, Dir d) const {
    if (!edge_weights) return 1.0;
    return (*edge_weights)[dir_index(d)].at(p.y, p.x);
  }
};

// Label difference in canonical edge coordinates (edges oriented rightward /
// downward): sweeps against the orientation transpose, so both sweeps score
// an edge identically and the step function's asymmetry is anchored to the
// image axes.
inline int canonical_delta(Dir dir, int s, int t) {
  return (dir == Dir::right || dir == Dir::down) ? t - s : s - t;
}

// f for the edge leaving `pixel` in direction `dir`, source label s at the
// sender, target label t at the receiver.
inline double eval_pairwise(const PairwiseSpec& spec, Pixel pixel, Dir dir, int s, int t) {
  if (spec.is_jump()) {
    const JumpParams& jp = spec.jump();
    return -jp.weight(pixel, dir) * jp.theta(canonical_delta(dir, s, t)) *
           spec.edge_weight(pixel, dir);
  }
  const CompatMatrix& m = spec.matrix();
  assert(s >= 0 && s < m.labels && t >= 0 && t < m.labels);
  double w = spec.edge_weight(pixel, dir);
  switch (dir) {
    case Dir::right: return w * m.h(s, t);
    case Dir::left: return w * m.h(t, s);
    case Dir::down: return w * m.vert(s, t);
    case Dir::up: return w * m.vert(t, s);
  }
  return 0.0;
}

// g = T * q, elementwise.
inline UnaryVolume apply_temperature(const Volume& q, Temperature temp) {
  UnaryVolume g(q.shape);
  for (size_t i = 0; i < q.v.size(); ++i) g.v[i] = temp.t * q.v[i];
  return g;
}

// Edge-aware weights from an image: w = exp(-beta * |I(p + dir) - I(p)|).
// Stand-in for a learned weight net; border edges keep w = 1.
inline std::array<Image, 4> weights_from_image(const Image& img, double beta = 1.0) {
  std::array<Image, 4> w;
  for (int d = 0; d < 4; ++d) w[d] = Image(img.height, img.width, 1.0);
  for (int d = 0; d < 4; ++d) {
    Dir dir = (Dir)d;
    int dy = dir_dy(dir), dx = dir_dx(dir);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= img.height || nx < 0 || nx >= img.width) continue;
        w[d].at(y, x) = std::exp(-beta * std::abs(img.at(ny, nx) - img.at(y, x)));
      }
  }
  return w;
}

// Gradients of a scalar loss in the jump parameters.
struct JumpGrad {
  double p1_pos = 0.0;
  double p1_neg = 0.0;
  double p2_pos = 0.0;
  double p2_neg = 0.0;
  double p3 = 0.0;
  std::optional<std::array<Image, 4>> per_pixel_weights;

  void add_theta(int delta, double g) {
    switch (delta) {
      case 0: return;
      case 1: p1_pos += g; return;
      case -1: p1_neg += g; return;
      case 2: p2_pos += g; return;
      case -2: p2_neg += g; return;
      default: p3 += g; return;
    }
  }

  void accumulate(const JumpGrad& o) {
    p1_pos += o.p1_pos;
    p1_neg += o.p1_neg;
    p2_pos += o.p2_pos;
    p2_neg += o.p2_neg;
    p3 += o.p3;
    if (o.per_pixel_weights) {
      if (!per_pixel_weights) per_pixel_weights = o.per_pixel_weights;
      else
        for (int d = 0; d < 4; ++d)
          for (size_t i = 0; i < (*per_pixel_weights)[d].v.size(); ++i)
            (*per_pixel_weights)[d].v[i] += (*o.per_pixel_weights)[d].v[i];
    }
  }
};

struct MatrixGrad {
  CompatMatrix m;  // reuses the matrix layout for dH, dV

  void accumulate(const MatrixGrad& o) {
    for (size_t i = 0; i < m.horizontal.size(); ++i) m.horizontal[i] += o.m.horizontal[i];
    for (size_t i = 0; i < m.vertical.size(); ++i) m.vertical[i] += o.m.vertical[i];
  }
};

// Gradient accumulator matching the active PairwiseSpec's parameter layout.
// Chain backprop routes every f̄ contribution through here via add().
struct PairwiseGrad {
  std::variant<JumpGrad, MatrixGrad> grad;
  const PairwiseSpec* spec = nullptr;

  explicit PairwiseGrad(const PairwiseSpec& s) : spec(&s) {
    if (s.is_jump()) {
      JumpGrad jg;
      if (s.jump().per_pixel_weights) {
        jg.per_pixel_weights.emplace();
        for (int d = 0; d < 4; ++d) {
          const Image& w = (*s.jump().per_pixel_weights)[d];
          (*jg.per_pixel_weights)[d] = Image(w.height, w.width, 0.0);
        }
      }
      grad = jg;
    } else {
      grad = MatrixGrad{CompatMatrix(s.matrix().labels, 0.0)};
    }
  }

  bool is_jump() const { return std::holds_alternative<JumpGrad>(grad); }
  JumpGrad& jump() { return std::get<JumpGrad>(grad); }
  const JumpGrad& jump() const { return std::get<JumpGrad>(grad); }
  MatrixGrad& matrix() { return std::get<MatrixGrad>(grad); }
  const MatrixGrad& matrix() const { return std::get<MatrixGrad>(grad); }

  // z = dL/df for the edge leaving `pixel` in `dir` with labels (s, t).
  void add(Pixel pixel, Dir dir, int s, int t, double z) {
    double ew = spec->edge_weight(pixel, dir);
    if (is_jump()) {
      const JumpParams& jp = spec->jump();
      JumpGrad& jg = jump();
      int delta = canonical_delta(dir, s, t);
      double w = jp.weight(pixel, dir);
      jg.add_theta(delta, -w * ew * z);
      if (jg.per_pixel_weights)
        (*jg.per_pixel_weights)[dir_index(dir)].at(pixel.y, pixel.x) -=
            jp.theta(delta) * ew * z;
    } else {
      CompatMatrix& dm = matrix().m;
      double wz = ew * z;
      switch (dir) {
        case Dir::right: dm.h(s, t) += wz; break;
        case Dir::left: dm.h(t, s) += wz; break;
        case Dir::down: dm.vert(s, t) += wz; break;
        case Dir::up: dm.vert(t, s) += wz; break;
      }
    }
  }

  void accumulate(const PairwiseGrad& o) {
    if (is_jump()) jump().accumulate(o.jump());
    else matrix().accumulate(o.matrix());
  }
};

// Gradients of a scalar loss in the DP inputs: unaries, pairwise parameters
// and the temperature.
struct GradBundle {
  Volume d_unary;
  PairwiseGrad d_pairwise;
  double d_temperature = 0.0;

  GradBundle(GridShape shape, const PairwiseSpec& spec)
      : d_unary(shape), d_pairwise(spec) {}
};

}  // namespace bpgrid
