#pragma once

#include "rlab/metric_core.hpp"
#include "rlab/sphere.hpp"

#include <random>
#include <vector>

namespace rlab::testing {

// Connected random graph: a random spanning tree plus `extra` random edges,
// lengths uniform in [0.1, 1].
inline WeightedGraph random_graph(int n, int extra, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> len(0.1, 1.0);
  WeightedGraph g(n);
  for (int v = 1; v < n; ++v) {
    std::uniform_int_distribution<int> parent(0, v - 1);
    g.add_edge(v, parent(rng), len(rng));
  }
  std::uniform_int_distribution<int> any(0, n - 1);
  for (int e = 0; e < extra; ++e) {
    const int a = any(rng), b = any(rng);
    if (a != b) g.add_edge(a, b, len(rng));
  }
  return g;
}

// Exact great-circle metric on points of the unit sphere.
inline FiniteMetricSpace round_sphere_space(const std::vector<Vec3>& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd d(n, n);
  Eigen::MatrixXd c(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    c.row(i) = pts[i].transpose();
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = sphere::distance(pts[i], pts[j]);
  }
  return FiniteMetricSpace(d, {}, c);
}

inline FiniteMetricSpace sphere_mesh_space(int points, int k = 6) {
  const auto pts = sphere::fibonacci_points(points);
  auto g = knn_graph(pts, k, [](const Vec3& a, const Vec3& b) { return sphere::distance(a, b); });
  Eigen::MatrixXd c(points, 3);
  for (int i = 0; i < points; ++i) c.row(i) = pts[static_cast<std::size_t>(i)].transpose();
  return graph_metric(g, {}, c);
}

}  // namespace rlab::testing
