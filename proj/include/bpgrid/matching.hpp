#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "bpgrid/core.hpp"
#include "bpgrid/inference.hpp"

namespace bpgrid {

// H×W×C feature stack; census bits are stored as 0/1 reals so the L1 distance
// is the Hamming distance.
struct FeatureMap {
  int height = 0, width = 0, channels = 0;
  std::vector<double> v;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c) : height(h), width(w), channels(c), v((size_t)h * w * c) {}
  double& at(int y, int x, int c) { return v[((size_t)y * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return v[((size_t)y * width + x) * channels + c]; }
  const double* px(int y, int x) const { return v.data() + ((size_t)y * width + x) * channels; }
};

// Census transform: one bit per window neighbor, set when the neighbor is
// darker than the center. Borders use clamped indexing.
inline FeatureMap census_features(const Image& img, int window = 5) {
  if (window < 3 || window % 2 == 0)
    throw std::runtime_error("census_features: window must be odd and >= 3");
  int r = window / 2;
  FeatureMap f(img.height, img.width, window * window - 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double center = img.at(y, x);
      int c = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          int ny = std::clamp(y + dy, 0, img.height - 1);
          int nx = std::clamp(x + dx, 0, img.width - 1);
          f.at(y, x, c++) = img.at(ny, nx) < center ? 1.0 : 0.0;
        }
    }
  return f;
}

namespace detail {

inline double l1_dist(const double* a, const double* b, int c) {
  double d = 0.0;
  for (int i = 0; i < c; ++i) d += std::abs(a[i] - b[i]);
  return d;
}

inline void softmax_row(double* q, int n) {
  double c = q[0];
  for (int i = 1; i < n; ++i) c = std::max(c, q[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    q[i] = std::exp(q[i] - c);
    sum += q[i];
  }
  for (int i = 0; i < n; ++i) q[i] /= sum;
}

}  // namespace detail

// Matching distribution for rectified stereo: per pixel the softmax over
// disparities k of the negative L1 feature distance to the right-image pixel
// shifted by k. Out-of-image disparities take the worst in-range distance so
// they are never preferred.
inline Volume stereo_unaries(const FeatureMap& feat0, const FeatureMap& feat1, int max_disp) {
  assert(feat0.height == feat1.height && feat0.width == feat1.width &&
         feat0.channels == feat1.channels);
  if (max_disp < 1) throw std::runtime_error("stereo_unaries: max_disp must be >= 1");
  if (max_disp >= feat0.width)
    throw std::runtime_error("stereo_unaries: max_disp must be smaller than the image width");
  int L = max_disp + 1;
  Volume q({feat0.height, feat0.width, L});
  std::vector<double> dist(L);
  for (int y = 0; y < feat0.height; ++y)
    for (int x = 0; x < feat0.width; ++x) {
      double worst = 0.0;
      int in_range = std::min(L, x + 1);
      for (int k = 0; k < in_range; ++k) {
        dist[k] = detail::l1_dist(feat0.px(y, x), feat1.px(y, x - k), feat0.channels);
        worst = std::max(worst, dist[k]);
      }
      for (int k = in_range; k < L; ++k) dist[k] = worst;
      double* row = q.row(y, x);
      for (int k = 0; k < L; ++k) row[k] = -dist[k];
      detail::softmax_row(row, L);
    }
  return q;
}

// Per-axis flow distributions from a (2R+1)^2 search window, computed one
// pixel at a time: the opposite component is maxed out on the fly, so only
// the window's score block is ever held in memory. Labels shift u from
// [-R, R] to [0, 2R]; u1 is the horizontal component.
inline std::pair<Volume, Volume> flow_unaries(const FeatureMap& feat0,
                                              const FeatureMap& feat1, int radius) {
  assert(feat0.height == feat1.height && feat0.width == feat1.width &&
         feat0.channels == feat1.channels);
  if (radius < 1) throw std::runtime_error("flow_unaries: radius must be >= 1");
  if (radius >= feat0.height || radius >= feat0.width)
    throw std::runtime_error("flow_unaries: radius must be smaller than the image");
  int n = 2 * radius + 1;
  Volume q1({feat0.height, feat0.width, n});
  Volume q2({feat0.height, feat0.width, n});
  std::vector<double> win((size_t)n * n);
  std::vector<bool> ok((size_t)n * n);
  for (int y = 0; y < feat0.height; ++y)
    for (int x = 0; x < feat0.width; ++x) {
      double worst = 0.0;
      for (int u2 = -radius; u2 <= radius; ++u2)
        for (int u1 = -radius; u1 <= radius; ++u1) {
          size_t i = (size_t)(u2 + radius) * n + (u1 + radius);
          int ny = y + u2, nx = x + u1;
          if (ny < 0 || ny >= feat0.height || nx < 0 || nx >= feat0.width) {
            ok[i] = false;
            continue;
          }
          ok[i] = true;
          win[i] = detail::l1_dist(feat0.px(y, x), feat1.px(ny, nx), feat0.channels);
          worst = std::max(worst, win[i]);
        }
      double* r1 = q1.row(y, x);
      double* r2 = q2.row(y, x);
      for (int i = 0; i < n; ++i) r1[i] = r2[i] = -std::numeric_limits<double>::infinity();
      for (int u2 = 0; u2 < n; ++u2)
        for (int u1 = 0; u1 < n; ++u1) {
          size_t i = (size_t)u2 * n + u1;
          double score = -(ok[i] ? win[i] : worst);
          r1[u1] = std::max(r1[u1], score);
          r2[u2] = std::max(r2[u2], score);
        }
      detail::softmax_row(r1, n);
      detail::softmax_row(r2, n);
    }
  return {std::move(q1), std::move(q2)};
}

}  // namespace bpgrid
