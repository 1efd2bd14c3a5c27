#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bpgrid/core.hpp"

namespace bpgrid {
namespace oracle {

// A tiny labeling problem given explicitly: n nodes, L labels, unary table
// and per-edge L×L score tables. Used only as ground truth for the DP and
// sweep code, so everything here is brute force on purpose.
struct SmallGraph {
  int nodes = 0;
  int labels = 0;
  std::vector<double> unary;  // n×L
  struct Edge {
    int u, v;
    std::vector<double> f;  // L×L, f[s*L + t] scores (x_u = s, x_v = t)
  };
  std::vector<Edge> edges;

  double g(int i, int s) const { return unary[(size_t)i * labels + s]; }
};

// Max over all labelings with x_i = s of the total score, for every (i, s),
// by full enumeration.
inline std::vector<double> brute_max_marginals(const SmallGraph& graph) {
  int n = graph.nodes, L = graph.labels;
  double combos = std::pow((double)L, (double)n);
  if (combos > 1e6 + 0.5) throw std::runtime_error("brute_max_marginals: instance too large");

  std::vector<double> mm((size_t)n * L, -std::numeric_limits<double>::infinity());
  std::vector<int> x(n, 0);
  while (true) {
    double score = 0.0;
    for (int i = 0; i < n; ++i) score += graph.g(i, x[i]);
    for (const auto& e : graph.edges) score += e.f[(size_t)x[e.u] * L + x[e.v]];
    for (int i = 0; i < n; ++i) {
      double& m = mm[(size_t)i * L + x[i]];
      m = std::max(m, score);
    }
    int k = n - 1;
    while (k >= 0 && ++x[k] == L) x[k--] = 0;
    if (k < 0) break;
  }
  return mm;
}

inline double smax(const double* a, int n) {
  double c = a[0];
  for (int i = 1; i < n; ++i) c = std::max(c, a[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(a[i] - c);
  return c + std::log(sum);
}

inline double smax(const std::vector<double>& a) { return smax(a.data(), (int)a.size()); }

// Forward chain messages with the hard max replaced by log-sum-exp; the
// sum-product analogue of dp_forward on a chain given as consecutive nodes
// 0..n-1 of a SmallGraph whose edges are (i, i+1) in order.
inline std::vector<double> smax_chain_messages(const SmallGraph& chain) {
  int n = chain.nodes, L = chain.labels;
  std::vector<double> m((size_t)n * L, 0.0), cand(L);
  for (int i = 0; i + 1 < n; ++i) {
    const auto& f = chain.edges[i].f;
    for (int t = 0; t < L; ++t) {
      for (int s = 0; s < L; ++s)
        cand[s] = chain.g(i, s) + m[(size_t)i * L + s] + f[(size_t)s * L + t];
      m[(size_t)(i + 1) * L + t] = smax(cand);
    }
  }
  return m;
}

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// function; `analytic` is its gradient at `point`. Returns the worst relative
// error over the direction set.
inline double fd_gradcheck(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& point,
                           const std::vector<double>& analytic,
                           const std::vector<std::vector<double>>& directions,
                           double step = 1e-4) {
  if (analytic.size() != point.size()) throw std::runtime_error("fd_gradcheck: size mismatch");
  double worst = 0.0;
  for (const auto& d : directions) {
    std::vector<double> plus = point, minus = point;
    for (size_t i = 0; i < point.size(); ++i) {
      plus[i] += step * d[i];
      minus[i] -= step * d[i];
    }
    double fp = f(plus), fm = f(minus);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("fd_gradcheck: non-finite evaluation");
    double fd = (fp - fm) / (2.0 * step);
    double an = 0.0;
    for (size_t i = 0; i < point.size(); ++i) an += analytic[i] * d[i];
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

// Axis-aligned directions for every coordinate; the common choice for small
// instances.
inline std::vector<std::vector<double>> axis_directions(size_t dim) {
  std::vector<std::vector<double>> dirs(dim, std::vector<double>(dim, 0.0));
  for (size_t i = 0; i < dim; ++i) dirs[i][i] = 1.0;
  return dirs;
}

// Adds uniform noise in [0, magnitude) to every entry, breaking argmax ties
// almost surely so gradient checks sit inside a linear region. Reproducible
// from the seed.
inline void perturb_ties(std::vector<double>& values, uint64_t seed,
                         double magnitude = 1e-3) {
  Rng rng(seed);
  for (double& v : values) v += uniform(rng, 0.0, magnitude);
}

}  // namespace oracle
}  // namespace bpgrid
