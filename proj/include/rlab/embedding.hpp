#pragma once

// Truncated distance maps rho_y into L^2 of a measured finite metric space,
// their Gram matrix, bi-Lipschitz distortion and spectral projection.

#include "rlab/errors.hpp"
#include "rlab/metric_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <utility>
#include <vector>

namespace rlab {

enum class Truncation {
  hard,     // rho_y(z) = d(y,z) if d(y,z) <= 10r, else 0
  clamped,  // min(d(y,z), 10r): a Lipschitz variant, for comparison
};

inline Eigen::VectorXd rho(const FiniteMetricSpace& base, int y, double r,
                           Truncation mode = Truncation::hard) {
  if (!(r > 0.0)) throw ValidationError("rho: r must be positive");
  const int n = base.size();
  const double cut = 10.0 * r;
  Eigen::VectorXd v(n);
  for (int z = 0; z < n; ++z) {
    const double d = base(y, z);
    v(z) = mode == Truncation::hard ? (d <= cut ? d : 0.0) : std::min(d, cut);
  }
  return v;
}

struct EmbeddingGram {
  FiniteMetricSpace base;
  double r = 0.0;
  Truncation mode = Truncation::hard;
  Eigen::MatrixXd gram;          // G(x,y) = sum_z w(z) rho_x(z) rho_y(z)
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
  std::vector<bool> boundary;    // points excluded from distortion reports

  int size() const { return base.size(); }
};

inline EmbeddingGram build_gram(const FiniteMetricSpace& base, double r,
                                Truncation mode = Truncation::hard) {
  const int n = base.size();
  if (n == 0) throw ValidationError("build_gram: empty space");
  if (!(r > 0.0)) throw ValidationError("build_gram: r must be positive");
  Eigen::MatrixXd R(n, n);
  for (int y = 0; y < n; ++y) R.row(y) = rho(base, y, r, mode).transpose();
  Eigen::VectorXd w(n);
  for (int z = 0; z < n; ++z) w(z) = base.weights()[static_cast<std::size_t>(z)];
  EmbeddingGram g{base, r, mode, {}, {}, {}, std::vector<bool>(static_cast<std::size_t>(n), false)};
  g.gram = R * w.asDiagonal() * R.transpose();
  g.gram = 0.5 * (g.gram + g.gram.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.gram);
  g.eigenvalues = es.eigenvalues().reverse();
  g.eigenvectors = es.eigenvectors().rowwise().reverse();
  return g;
}

inline double l2_distance(const EmbeddingGram& g, int x, int y) {
  if (x == y) return 0.0;
  if (x > y) std::swap(x, y);  // same rounding in both orders
  const double sq = g.gram(x, x) - 2.0 * g.gram(x, y) + g.gram(y, y);
  return std::sqrt(std::max(0.0, sq));
}

// Weight of the closed ball B_s(x).
inline double ball_weight(const FiniteMetricSpace& space, int x, double s) {
  double total = 0.0;
  for (int z = 0; z < space.size(); ++z)
    if (space(x, z) <= s) total += space.weights()[static_cast<std::size_t>(z)];
  return total;
}

struct DistortionReport {
  std::vector<int> subset;
  double c_up = 1.0;  // max ||rho_x - rho_y|| / d(x,y)
  double c_lo = 1.0;  // max min{d(x,y), 1} / ||rho_x - rho_y||
  std::pair<int, int> up_witness{-1, -1};
  std::pair<int, int> lo_witness{-1, -1};
  long long pairs = 0;
  long long degenerate = 0;  // distinct points with identical rho (c_lo infinite)

  double product() const { return c_up * c_lo; }
};

// Exact max over all pairs of the subset with a caller-supplied embedded
// distance; boundary-flagged points are skipped.
template <class Dist>
DistortionReport distortion_with(const EmbeddingGram& g, std::vector<int> subset, Dist&& emb) {
  DistortionReport rep;
  if (subset.empty())
    for (int i = 0; i < g.size(); ++i) subset.push_back(i);
  std::vector<int> kept;
  for (int i : subset)
    if (!g.boundary[static_cast<std::size_t>(i)]) kept.push_back(i);
  rep.subset = kept;
  if (kept.size() < 2) return rep;
  rep.c_up = 0.0;
  rep.c_lo = 0.0;
  for (std::size_t a = 0; a < kept.size(); ++a)
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      const int x = kept[a], y = kept[b];
      const double d = g.base(x, y);
      if (!(d > 0.0)) continue;
      const double e = emb(x, y);
      ++rep.pairs;
      if (e / d > rep.c_up) {
        rep.c_up = e / d;
        rep.up_witness = {x, y};
      }
      if (!(e > 0.0)) {
        ++rep.degenerate;
        rep.c_lo = std::numeric_limits<double>::infinity();
        rep.lo_witness = {x, y};
        continue;
      }
      const double lo = std::min(d, 1.0) / e;
      if (lo > rep.c_lo) {
        rep.c_lo = lo;
        rep.lo_witness = {x, y};
      }
    }
  return rep;
}

inline DistortionReport distortion(const EmbeddingGram& g, std::vector<int> subset = {}) {
  return distortion_with(g, std::move(subset), [&](int x, int y) { return l2_distance(g, x, y); });
}

struct BoundCheck {
  long long pairs = 0;
  long long violations = 0;
  double worst_ratio = 0.0;  // measured / bound for the upper, bound / measured for the lower
  std::pair<int, int> witness{-1, -1};
};

// ||rho_x - rho_y|| <= sqrt(w(B_20r(x)) + w(B_20r(y))) d(x,y) over all pairs.
inline BoundCheck check_upper_bound(const EmbeddingGram& g, double rel_tol = 1e-12) {
  BoundCheck c;
  const int n = g.size();
  std::vector<double> w20(static_cast<std::size_t>(n));
  for (int x = 0; x < n; ++x) w20[static_cast<std::size_t>(x)] = ball_weight(g.base, x, 20.0 * g.r);
  for (int x = 0; x < n; ++x)
    for (int y = x + 1; y < n; ++y) {
      const double bound = std::sqrt(w20[static_cast<std::size_t>(x)] + w20[static_cast<std::size_t>(y)]) * g.base(x, y);
      const double e = l2_distance(g, x, y);
      ++c.pairs;
      const double ratio = bound > 0.0 ? e / bound : (e > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      if (ratio > c.worst_ratio) {
        c.worst_ratio = ratio;
        c.witness = {x, y};
      }
      if (e > bound * (1.0 + rel_tol)) ++c.violations;
    }
  return c;
}

// ||rho_x - rho_y||^2 >= w(B_{r/4}(y)) (r/2)^2 for every ordered pair with d > r.
inline BoundCheck check_far_lower_bound(const EmbeddingGram& g, double rel_tol = 1e-12) {
  BoundCheck c;
  const int n = g.size();
  std::vector<double> wq(static_cast<std::size_t>(n));
  for (int y = 0; y < n; ++y) wq[static_cast<std::size_t>(y)] = ball_weight(g.base, y, 0.25 * g.r);
  for (int x = 0; x < n; ++x)
    for (int y = 0; y < n; ++y) {
      if (x == y || !(g.base(x, y) > g.r)) continue;
      const double bound = wq[static_cast<std::size_t>(y)] * 0.25 * g.r * g.r;
      const double e2 = std::pow(l2_distance(g, x, y), 2);
      ++c.pairs;
      const double ratio = e2 > 0.0 ? bound / e2 : std::numeric_limits<double>::infinity();
      if (ratio > c.worst_ratio) {
        c.worst_ratio = ratio;
        c.witness = {x, y};
      }
      if (e2 * (1.0 + rel_tol) < bound) ++c.violations;
    }
  return c;
}

struct Projection {
  int dimension = 0;
  double captured = 0.0;       // fraction of the trace kept
  Eigen::MatrixXd coords;      // n x N, rows V_N Lambda_N^{1/2}
  DistortionReport report;
  double max_excess = 0.0;     // max (projected - Gram) pairwise distance
};

inline double projected_distance(const Projection& p, int x, int y) {
  return (p.coords.row(x) - p.coords.row(y)).norm();
}

// Keeps the fewest leading eigenvectors whose eigenvalues reach `energy` of
// the trace. Throws RankDeficient if the Gram matrix carries no energy or
// more than max_dimension directions would be needed.
inline Projection project(const EmbeddingGram& g, double energy, int max_dimension = -1) {
  if (!(energy > 0.0 && energy <= 1.0)) throw ValidationError("project: energy must lie in (0, 1]");
  const int n = g.size();
  const double trace = g.gram.trace();
  if (!(trace > 0.0)) throw RankDeficient("project: Gram matrix has zero trace");
  int dim = 0;
  double kept = 0.0;
  const double target = energy * trace * (1.0 - 1e-14);
  while (dim < n && kept < target && g.eigenvalues(dim) > 0.0) kept += g.eigenvalues(dim++);
  if (energy >= 1.0)
    while (dim < n && g.eigenvalues(dim) > 0.0) ++dim;  // every positive direction
  if (kept < target && energy < 1.0) throw RankDeficient("project: energy target unreachable");
  if (max_dimension > 0 && dim > max_dimension)
    throw RankDeficient("project: energy target needs more than the allowed dimension");
  Projection p;
  p.dimension = dim;
  p.captured = kept / trace;
  p.coords = g.eigenvectors.leftCols(dim) * g.eigenvalues.head(dim).cwiseSqrt().asDiagonal();
  p.report = distortion_with(g, {}, [&](int x, int y) { return projected_distance(p, x, y); });
  for (int x = 0; x < n; ++x)
    for (int y = x + 1; y < n; ++y)
      p.max_excess = std::max(p.max_excess, projected_distance(p, x, y) - l2_distance(g, x, y));
  return p;
}

// ---------------------------------------------------------------------------
// Contraction and expansion sets

// Vertex on the stored path x -> z nearest to arclength s d(x,z).
inline int path_point(const FiniteMetricSpace& space, int x, int z, double s) {
  const std::vector<int> path = space.geodesics().path(x, z);
  if (path.empty()) throw MissingGeodesics("path_point: no stored path");
  const double goal = s * space(x, z);
  int best = path.front();
  double best_gap = goal, run = 0.0;
  for (std::size_t k = 1; k < path.size(); ++k) {
    run += space(path[k - 1], path[k]);
    if (std::abs(run - goal) < best_gap) {
      best_gap = std::abs(run - goal);
      best = path[k];
    }
  }
  return best;
}

// C^s_t(x) = {gamma_{x,z}(s d(x,z)) : z in B_t(x)}.
inline std::vector<int> contraction_set(const FiniteMetricSpace& space, int x, double s, double t) {
  if (!(s > 0.0 && s <= 1.0)) throw ValidationError("contraction_set: s must lie in (0, 1]");
  std::set<int> out;
  for (int z = 0; z < space.size(); ++z)
    if (space(x, z) <= t) out.insert(path_point(space, x, z, s));
  return {out.begin(), out.end()};
}

// E^s_t(x, U) = {z in B_t(x) : gamma_{x,z}(s d(x,z)) in U}.
inline std::vector<int> expansion_set(const FiniteMetricSpace& space, int x, double s, double t,
                                      const std::vector<int>& U) {
  if (!(s > 0.0 && s <= 1.0)) throw ValidationError("expansion_set: s must lie in (0, 1]");
  const std::set<int> target(U.begin(), U.end());
  std::vector<int> out;
  for (int z = 0; z < space.size(); ++z)
    if (space(x, z) <= t && target.count(path_point(space, x, z, s))) out.push_back(z);
  return out;
}

// ---------------------------------------------------------------------------
// Test spaces

// n x n grid on the flat torus of side `side`: exact distances, cell weights
// and planar coordinates in the fundamental square.
inline FiniteMetricSpace flat_torus(int n, double side = 1.0) {
  if (n < 2) throw ValidationError("flat_torus: need n >= 2");
  const int m = n * n;
  const double h = side / n;
  Eigen::MatrixXd d(m, m), coords(m, 2);
  for (int a = 0; a < m; ++a) {
    coords(a, 0) = (a % n) * h;
    coords(a, 1) = (a / n) * h;
  }
  auto wrap = [&](int k) { return std::min(k, n - k) * h; };
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const int dx = std::abs(a % n - b % n), dy = std::abs(a / n - b / n);
      d(a, b) = std::hypot(wrap(dx), wrap(dy));
    }
  return FiniteMetricSpace(d, std::vector<double>(static_cast<std::size_t>(m), h * h), coords);
}

inline void write_projection_csv(std::ostream& os, const Projection& p) {
  os.precision(12);
  os << "point";
  for (int k = 0; k < p.dimension; ++k) os << ",c" << k;
  os << '\n';
  for (int i = 0; i < p.coords.rows(); ++i) {
    os << i;
    for (int k = 0; k < p.dimension; ++k) os << ',' << p.coords(i, k);
    os << '\n';
  }
}

}  // namespace rlab
