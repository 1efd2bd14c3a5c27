#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

namespace bpgrid {

// Grid dimensions: H×W pixels, L labels per pixel.
struct GridShape {
  int height = 0;
  int width = 0;
  int labels = 0;

  int pixels() const { return height * width; }
  int size() const { return height * width * labels; }
  bool operator==(const GridShape&) const = default;
};

// Dense H×W×L volume of doubles, row-major with the label axis innermost.
// Used for unary scores, log-beliefs, beliefs and message fields alike.
struct Volume {
  GridShape shape;
  std::vector<double> v;

  Volume() = default;
  explicit Volume(GridShape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}

  double& at(int y, int x, int s) { return v[idx(y, x, s)]; }
  double at(int y, int x, int s) const { return v[idx(y, x, s)]; }
  int idx(int y, int x, int s) const {
    assert(y >= 0 && y < shape.height && x >= 0 && x < shape.width);
    assert(s >= 0 && s < shape.labels);
    return (y * shape.width + x) * shape.labels + s;
  }
  double* row(int y, int x) { return v.data() + (y * shape.width + x) * shape.labels; }
  const double* row(int y, int x) const { return v.data() + (y * shape.width + x) * shape.labels; }
};

using UnaryVolume = Volume;   // scores, higher = better
using BeliefVolume = Volume;  // per-pixel distributions, rows sum to 1

// Scalar H×W map (images, disparities, weights).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), v((size_t)h * w, fill) {}

  double& at(int y, int x) { return v[(size_t)y * width + x]; }
  double at(int y, int x) const { return v[(size_t)y * width + x]; }
  int pixels() const { return height * width; }
};

// H×W integer label map; negative entries mark invalid/unlabeled pixels.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int32_t> v;

  LabelMap() = default;
  LabelMap(int h, int w, int32_t fill = 0) : height(h), width(w), v((size_t)h * w, fill) {}

  int32_t& at(int y, int x) { return v[(size_t)y * width + x]; }
  int32_t at(int y, int x) const { return v[(size_t)y * width + x]; }
};

// Learnable scale of the unary model g = T*q.
struct Temperature {
  double t = 1.0;
};

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Seeded RNG; every randomized routine in the project takes one of these so
// runs are reproducible from a single 64-bit seed.
using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Runs fn(i) for i in [begin, end). Chains in a sweep write disjoint output
// slices, so splitting the index range over threads is safe. threads <= 1 or
// a tiny range runs inline.
template <class Fn>
void parallel_for(int begin, int end, int threads, Fn&& fn) {
  int n = end - begin;
  if (n <= 0) return;
  if (threads <= 0) threads = (int)std::thread::hardware_concurrency();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int chunk = (n + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    int lo = begin + w * chunk;
    int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace bpgrid
