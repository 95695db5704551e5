#pragma once

#include "rlab/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace rlab {

inline constexpr double kTolTriangleExact = 1e-9;
inline constexpr double kTolTriangleMeshed = 1e-6;

// Shortest-path trees, one per source: pred(source, target) is the vertex
// preceding target on the stored path from source, -1 at the source itself.
class GeodesicTable {
 public:
  GeodesicTable() = default;
  explicit GeodesicTable(Eigen::MatrixXi pred) : pred_(std::move(pred)) {}

  int predecessor(int source, int target) const { return pred_(source, target); }
  int size() const { return static_cast<int>(pred_.rows()); }

  // Ordered vertex ids from source to target inclusive.
  std::vector<int> path(int source, int target) const {
    std::vector<int> out;
    for (int v = target; v != -1; v = pred_(source, v)) {
      out.push_back(v);
      if (v == source) break;
      if (out.size() > static_cast<std::size_t>(pred_.rows()))
        throw Error("GeodesicTable: cycle in predecessor table");
    }
    if (out.empty() || out.back() != source) return {};
    std::reverse(out.begin(), out.end());
    return out;
  }


 private:
  Eigen::MatrixXi pred_;
};

// Dense symmetric distance matrix over sample points with per-point weights.
// Construction checks shape only; metric axioms are checked by validate_metric.
class FiniteMetricSpace {
 public:
  FiniteMetricSpace() = default;

  explicit FiniteMetricSpace(Eigen::MatrixXd dist, std::vector<double> weights = {},
                             Eigen::MatrixXd coords = {},
                             std::optional<GeodesicTable> geodesics = std::nullopt)
      : dist_(std::move(dist)),
        weights_(std::move(weights)),
        coords_(std::move(coords)),
        geodesics_(std::move(geodesics)) {
    if (dist_.rows() != dist_.cols())
      throw ValidationError("FiniteMetricSpace: distance matrix must be square");
    if (weights_.empty()) weights_.assign(static_cast<std::size_t>(dist_.rows()), 1.0);
    if (static_cast<Eigen::Index>(weights_.size()) != dist_.rows())
      throw ValidationError("FiniteMetricSpace: weight count does not match point count");
    if (coords_.size() != 0 && coords_.rows() != dist_.rows())
      throw ValidationError("FiniteMetricSpace: coordinate rows do not match point count");
    if (geodesics_ && geodesics_->size() != dist_.rows())
      throw ValidationError("FiniteMetricSpace: geodesic table size mismatch");
  }

  int size() const { return static_cast<int>(dist_.rows()); }
  double operator()(int i, int j) const { return dist_(i, j); }
  const Eigen::MatrixXd& distances() const { return dist_; }
  const std::vector<double>& weights() const { return weights_; }
  double weight(int i) const { return weights_[static_cast<std::size_t>(i)]; }
  double total_weight() const {
    double w = 0.0;
    for (double x : weights_) w += x;
    return w;
  }
  bool has_coords() const { return coords_.size() != 0; }
  const Eigen::MatrixXd& coords() const { return coords_; }
  bool has_geodesics() const { return geodesics_.has_value(); }
  const GeodesicTable& geodesics() const {
    if (!geodesics_) throw MissingGeodesics("space carries no stored geodesics");
    return *geodesics_;
  }

  double diameter() const { return size() == 0 ? 0.0 : dist_.maxCoeff(); }

  FiniteMetricSpace scaled(double lambda) const {
    Eigen::MatrixXd c = coords_ * lambda;
    return FiniteMetricSpace(dist_ * lambda, weights_, std::move(c), geodesics_);
  }

  // Induced sub-space on ids (in the given order). Geodesics survive only
  // when every path stays inside the subset.
  FiniteMetricSpace subspace(const std::vector<int>& ids) const {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Eigen::MatrixXd d(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b) d(a, b) = dist_(ids[a], ids[b]);
    std::vector<double> w;
    w.reserve(ids.size());
    for (int id : ids) w.push_back(weight(id));
    Eigen::MatrixXd c;
    if (has_coords()) {
      c.resize(n, coords_.cols());
      for (Eigen::Index a = 0; a < n; ++a) c.row(a) = coords_.row(ids[a]);
    }
    return FiniteMetricSpace(std::move(d), std::move(w), std::move(c));
  }

 private:
  Eigen::MatrixXd dist_;
  std::vector<double> weights_;
  Eigen::MatrixXd coords_;
  std::optional<GeodesicTable> geodesics_;
};

// ---------------------------------------------------------------------------
// Weighted graphs and shortest paths

struct WeightedGraph {
  struct Edge {
    int to;
    double length;
  };
  std::vector<std::vector<Edge>> adjacency;

  explicit WeightedGraph(int n = 0) : adjacency(static_cast<std::size_t>(n)) {}
  int size() const { return static_cast<int>(adjacency.size()); }
  void add_edge(int a, int b, double length) {
    adjacency[static_cast<std::size_t>(a)].push_back({b, length});
    adjacency[static_cast<std::size_t>(b)].push_back({a, length});
  }
};

struct ShortestPathTree {
  std::vector<double> dist;
  std::vector<int> pred;
};

inline ShortestPathTree dijkstra(const WeightedGraph& g, int source) {
  const auto n = static_cast<std::size_t>(g.size());
  ShortestPathTree t{std::vector<double>(n, std::numeric_limits<double>::infinity()),
                     std::vector<int>(n, -1)};
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  t.dist[static_cast<std::size_t>(source)] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > t.dist[static_cast<std::size_t>(v)]) continue;
    for (const auto& e : g.adjacency[static_cast<std::size_t>(v)]) {
      const double nd = d + e.length;
      // Ties broken toward the smaller predecessor id so output is
      // independent of heap internals.
      auto& cur = t.dist[static_cast<std::size_t>(e.to)];
      if (nd < cur || (nd == cur && v < t.pred[static_cast<std::size_t>(e.to)])) {
        const bool improved = nd < cur;
        cur = nd;
        t.pred[static_cast<std::size_t>(e.to)] = v;
        if (improved) heap.emplace(nd, e.to);
      }
    }
  }
  return t;
}

// All-pairs shortest paths with stored geodesics. Throws if disconnected.
inline FiniteMetricSpace graph_metric(const WeightedGraph& g, std::vector<double> weights = {},
                                      Eigen::MatrixXd coords = {}) {
  const int n = g.size();
  Eigen::MatrixXd d(n, n);
  Eigen::MatrixXi pred(n, n);
  for (int s = 0; s < n; ++s) {
    const auto tree = dijkstra(g, s);
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(tree.dist[static_cast<std::size_t>(v)]))
        throw ValidationError("graph_metric: graph is disconnected");
      d(s, v) = tree.dist[static_cast<std::size_t>(v)];
      pred(s, v) = tree.pred[static_cast<std::size_t>(v)];
    }
  }
  // Exact arithmetic would give symmetry; summation order differs per source.
  const Eigen::MatrixXd sym = 0.5 * (d + d.transpose());
  return FiniteMetricSpace(sym, std::move(weights), std::move(coords), GeodesicTable(pred));
}

// Symmetric k-nearest-neighbour graph over points with a distance callable.
template <class Point, class DistFn>
WeightedGraph knn_graph(const std::vector<Point>& pts, int k, DistFn&& dist) {
  const int n = static_cast<int>(pts.size());
  WeightedGraph g(n);
  std::vector<std::vector<bool>> linked(static_cast<std::size_t>(n),
                                        std::vector<bool>(static_cast<std::size_t>(n), false));
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(dist(pts[i], pts[j]), j);
    const int kk = std::min(k, n - 1);
    std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
    for (int a = 0; a < kk; ++a) {
      const int j = cand[static_cast<std::size_t>(a)].second;
      if (!linked[i][j]) {
        linked[i][j] = linked[j][i] = true;
        g.add_edge(i, j, cand[static_cast<std::size_t>(a)].first);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Metric validation

struct ValidationReport {
  double worst_triangle_violation = 0.0;
  std::array<int, 3> triangle_witness{-1, -1, -1};  // (i, j, k): d(i,j) > d(i,k)+d(k,j)
  double worst_asymmetry = 0.0;
  double worst_diagonal = 0.0;
  double min_entry = 0.0;
  long long triples_checked = 0;
  bool exhaustive = true;
  bool passed = false;
};

struct ValidateOptions {
  int exhaustive_limit = 60;
  long long sampled_triples = 100000;
  std::uint64_t seed = 1;
};

inline ValidationReport validate_metric(const FiniteMetricSpace& space, double tol,
                                        const ValidateOptions& opt = {}) {
  const int n = space.size();
  const auto& d = space.distances();
  if (!d.allFinite()) throw NonFiniteEntry("distance matrix contains NaN or inf");
  ValidationReport rep;
  rep.min_entry = n ? d.minCoeff() : 0.0;
  for (int i = 0; i < n; ++i) {
    rep.worst_diagonal = std::max(rep.worst_diagonal, std::abs(d(i, i)));
    for (int j = i + 1; j < n; ++j)
      rep.worst_asymmetry = std::max(rep.worst_asymmetry, std::abs(d(i, j) - d(j, i)));
  }
  auto check = [&](int i, int j, int k) {
    const double v = d(i, j) - d(i, k) - d(k, j);
    if (v > rep.worst_triangle_violation) {
      rep.worst_triangle_violation = v;
      rep.triangle_witness = {i, j, k};
    }
    ++rep.triples_checked;
  };
  if (n <= opt.exhaustive_limit) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) check(i, j, k);
  } else {
    rep.exhaustive = false;
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (long long t = 0; t < opt.sampled_triples; ++t) check(pick(rng), pick(rng), pick(rng));
  }
  double min_weight = 0.0;
  for (double w : space.weights()) min_weight = std::min(min_weight, w);
  rep.passed = rep.worst_triangle_violation <= tol && rep.worst_asymmetry <= tol &&
               rep.worst_diagonal <= tol && rep.min_entry >= -tol && min_weight >= 0.0 &&
               space.total_weight() > 0.0;
  return rep;
}

// Summed edge lengths of stored paths against the matrix, over all pairs
// (or `samples` random pairs when the space is large).
inline double worst_geodesic_defect(const FiniteMetricSpace& space, long long samples = -1,
                                    std::uint64_t seed = 1) {
  const auto& table = space.geodesics();
  const int n = space.size();
  double worst = 0.0;
  auto one = [&](int i, int j) {
    const auto p = table.path(i, j);
    double len = 0.0;
    for (std::size_t k = 1; k < p.size(); ++k) len += space(p[k - 1], p[k]);
    worst = std::max(worst, std::abs(len - space(i, j)));
  };
  if (samples < 0) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) one(i, j);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (long long t = 0; t < samples; ++t) one(pick(rng), pick(rng));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Comparison angle

// Angle at y of the Euclidean triangle with side lengths d_xy, d_yz, d_xz.
inline double angle(double d_xy, double d_yz, double d_xz, double tol_clamp = 1e-9) {
  if (d_xy <= 0.0 || d_yz <= 0.0)
    throw DegenerateVertex("comparison angle needs d_xy > 0 and d_yz > 0");
  const double q = (d_xy * d_xy + d_yz * d_yz - d_xz * d_xz) / (2.0 * d_xy * d_yz);
  if (std::abs(q) - 1.0 > tol_clamp)
    throw InvalidTriangle("side lengths violate the triangle inequality (cos = " +
                          std::to_string(q) + ")");
  return std::acos(std::clamp(q, -1.0, 1.0));
}

// ---------------------------------------------------------------------------
// Reverse triangle propagation along a geodesic

struct PropagationReport {
  struct Point {
    int id;
    double s;       // arclength along the path
    double margin;  // |d(x,g(s)) - d(g(s),y)| - (eps d(x,y) - slack)
    bool passed;
  };
  std::vector<Point> points;
  bool all_passed = true;
};

// `path` starts at x and passes through z at arclength d(x,z). `tol` is the
// geodesic tolerance of the space; conclusions are tested with slack 2*tol.
inline PropagationReport check_reverse_triangle(const FiniteMetricSpace& space, int x, int y,
                                                int z, const std::vector<int>& path, double eps,
                                                double tol = 0.0) {
  if (path.empty() || path.front() != x) throw HypothesisViolated("path must start at x");
  const double dxy = space(x, y);
  const double dxz = space(x, z);
  const double dzy = space(z, y);
  if (std::abs(dxz - dzy) < eps * dxy - tol)
    throw HypothesisViolated("|d(x,z) - d(z,y)| < eps d(x,y)");
  if (dxz < dzy - tol) throw HypothesisViolated("d(x,z) < d(z,y)");
  std::vector<double> arclen(path.size(), 0.0);
  for (std::size_t k = 1; k < path.size(); ++k)
    arclen[k] = arclen[k - 1] + space(path[k - 1], path[k]);
  std::size_t zpos = path.size();
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (std::abs(arclen[k] - space(x, path[k])) > tol + 1e-12 * (1.0 + arclen[k]))
      throw HypothesisViolated("path is not a minimizing geodesic from x");
    if (path[k] == z && zpos == path.size()) zpos = k;
  }
  if (zpos == path.size()) throw HypothesisViolated("path does not pass through z");
  PropagationReport rep;
  const double slack = 2.0 * tol + 1e-12 * (1.0 + dxy);
  for (std::size_t k = zpos; k < path.size(); ++k) {
    const int g = path[k];
    const double lhs = std::abs(space(x, g) - space(g, y));
    const double margin = lhs - (eps * dxy - slack);
    const bool ok = margin >= 0.0;
    rep.points.push_back({g, arclen[k], margin, ok});
    rep.all_passed = rep.all_passed && ok;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Balls and nets

struct PointedBall {
  int center = -1;
  double radius = 0.0;
  std::vector<int> members;  // ascending ids, center included
  bool only_center = false;  // radius below nearest-neighbour distance
};

inline PointedBall restrict_ball(const FiniteMetricSpace& space, int center, double radius) {
  if (!(radius > 0.0)) throw ValidationError("restrict_ball: radius must be positive");
  PointedBall b{center, radius, {}, false};
  for (int i = 0; i < space.size(); ++i)
    if (space(center, i) <= radius) b.members.push_back(i);
  b.only_center = b.members.size() == 1;
  return b;
}

struct Net {
  std::vector<int> ids;
  double covering_radius = 0.0;
};

// Greedy farthest-point selection over n abstract points. Stops after
// `count` picks or once the covering radius is <= `radius_target`.
template <class DistFn>
Net farthest_point_net(int n, DistFn&& dist, int count, int seed_point = 0,
                       double radius_target = -1.0) {
  Net net;
  if (n == 0) return net;
  count = std::clamp(count, 1, n);
  std::vector<double> gap(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int next = seed_point;
  for (;;) {
    net.ids.push_back(next);
    double best = -1.0;
    int arg = -1;
    for (int i = 0; i < n; ++i) {
      auto& g = gap[static_cast<std::size_t>(i)];
      g = std::min(g, dist(next, i));
      if (g > best) {
        best = g;
        arg = i;
      }
    }
    net.covering_radius = best;
    if (static_cast<int>(net.ids.size()) >= count) break;
    if (radius_target >= 0.0 && best <= radius_target) break;
    if (best <= 0.0) break;
    next = arg;
  }
  return net;
}

inline Net farthest_point_sample(const FiniteMetricSpace& space, int count, int seed_point = 0) {
  if (count < 1) throw ValidationError("farthest_point_sample: count must be >= 1");
  return farthest_point_net(space.size(), [&](int a, int b) { return space(a, b); }, count,
                            seed_point);
}

// ---------------------------------------------------------------------------
// Text and CSV serialization
//
// Text format:
//   line 1: "FMS1 <n> <has_weights 0|1> <coord_dim>"
//   if has_weights: one line of n weights
//   coord_dim lines-per-point block: n lines of coord_dim numbers
//   n lines of n distances
// Values are written with 17 significant digits so a round trip is exact.

inline void write_text(std::ostream& os, const FiniteMetricSpace& space) {
  const int n = space.size();
  const bool unit = std::all_of(space.weights().begin(), space.weights().end(),
                                [](double w) { return w == 1.0; });
  const auto dim = space.has_coords() ? space.coords().cols() : 0;
  os << "FMS1 " << n << ' ' << (unit ? 0 : 1) << ' ' << dim << '\n';
  os.precision(17);
  if (!unit) {
    for (int i = 0; i < n; ++i) os << (i ? " " : "") << space.weight(i);
    os << '\n';
  }
  for (int i = 0; i < n && dim; ++i) {
    for (Eigen::Index c = 0; c < dim; ++c) os << (c ? " " : "") << space.coords()(i, c);
    os << '\n';
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) os << (j ? " " : "") << space(i, j);
    os << '\n';
  }
}

inline FiniteMetricSpace read_text(std::istream& is) {
  std::string magic;
  int n = 0, has_w = 0;
  long dim = 0;
  if (!(is >> magic >> n >> has_w >> dim) || magic != "FMS1" || n < 0 || dim < 0)
    throw FormatError("bad FMS1 header");
  std::vector<double> w;
  if (has_w) {
    w.resize(static_cast<std::size_t>(n));
    for (auto& x : w)
      if (!(is >> x)) throw FormatError("truncated weight line");
  }
  Eigen::MatrixXd c;
  if (dim) {
    c.resize(n, dim);
    for (int i = 0; i < n; ++i)
      for (long k = 0; k < dim; ++k)
        if (!(is >> c(i, k))) throw FormatError("truncated coordinate block");
  }
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (!(is >> d(i, j))) throw FormatError("truncated distance block");
  return FiniteMetricSpace(std::move(d), std::move(w), std::move(c));
}

// CSV: one row per point, n comma-separated distances. Weights default to 1.
inline void write_csv(std::ostream& os, const FiniteMetricSpace& space) {
  os.precision(17);
  for (int i = 0; i < space.size(); ++i) {
    for (int j = 0; j < space.size(); ++j) os << (j ? "," : "") << space(i, j);
    os << '\n';
  }
}

inline FiniteMetricSpace read_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("non-numeric CSV cell '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n) throw FormatError("CSV matrix is not square");
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = rows[i][j];
  }
  return FiniteMetricSpace(std::move(d));
}

}  // namespace rlab
