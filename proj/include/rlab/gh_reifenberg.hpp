#pragma once

// Gromov-Hausdorff brackets between finite metric spaces and the
// (eps, r)-Reifenberg classification of points.

#include "rlab/errors.hpp"
#include "rlab/metric_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rlab {

// A relation R between the points of X and Y, stored as (x, y) pairs.
struct Correspondence {
  std::vector<std::pair<int, int>> pairs;
  double distortion = 0.0;
};

inline double correspondence_distortion(const FiniteMetricSpace& X, const FiniteMetricSpace& Y,
                                        const std::vector<std::pair<int, int>>& pairs) {
  double worst = 0.0;
  for (std::size_t a = 0; a < pairs.size(); ++a)
    for (std::size_t b = a + 1; b < pairs.size(); ++b) {
      const double e = std::abs(X(pairs[a].first, pairs[b].first) -
                                Y(pairs[a].second, pairs[b].second));
      worst = std::max(worst, e);
    }
  return worst;
}

// True when every point of both sides occurs in some pair.
inline bool is_correspondence(const Correspondence& c, int nx, int ny) {
  std::vector<bool> sx(static_cast<std::size_t>(nx), false), sy(static_cast<std::size_t>(ny), false);
  for (auto [x, y] : c.pairs) {
    if (x < 0 || x >= nx || y < 0 || y >= ny) return false;
    sx[static_cast<std::size_t>(x)] = true;
    sy[static_cast<std::size_t>(y)] = true;
  }
  return std::all_of(sx.begin(), sx.end(), [](bool b) { return b; }) &&
         std::all_of(sy.begin(), sy.end(), [](bool b) { return b; });
}

struct GHOptions {
  int restarts = 4;
  std::uint64_t seed = 1;
  int anchors = 4;
  int size_cap = 1500;
  int search_rounds = 400;
  std::optional<std::pair<int, int>> pin;  // a pair forced into every start, e.g. the centres
  std::vector<std::pair<int, int>> hint;   // optional starting relation, searched as well
};

struct GHBound {
  double value = 0.0;  // half the distortion
  Correspondence correspondence;
};

namespace detail {

// Relation built from maps f: X -> Y and g: Y -> X, refined by reassigning the
// image of the worst row until no reassignment lowers it.
class RelationSearch {
 public:
  RelationSearch(const FiniteMetricSpace& X, const FiniteMetricSpace& Y) : X_(X), Y_(Y) {}

  double run(std::vector<std::pair<int, int>>& pairs, int rounds) const {
    const std::size_t p = pairs.size();
    std::vector<double> row(p, 0.0);
    auto row_cost = [&](std::size_t a, int x, int y) {
      double w = 0.0;
      for (std::size_t b = 0; b < p; ++b) {
        if (b == a) continue;
        w = std::max(w, std::abs(X_(x, pairs[b].first) - Y_(y, pairs[b].second)));
      }
      return w;
    };
    auto refresh = [&] {
      for (std::size_t a = 0; a < p; ++a) row[a] = row_cost(a, pairs[a].first, pairs[a].second);
    };
    refresh();
    const std::size_t nx_pairs = static_cast<std::size_t>(X_.size());
    for (int it = 0; it < rounds; ++it) {
      const std::size_t worst =
          static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const double current = row[worst];
      if (current <= 0.0) break;
      // Candidate rows: the worst one and the rows realising its maximum.
      std::vector<std::size_t> rows{worst};
      for (std::size_t b = 0; b < p; ++b) {
        if (b == worst) continue;
        const double e = std::abs(X_(pairs[worst].first, pairs[b].first) -
                                  Y_(pairs[worst].second, pairs[b].second));
        if (e >= current) rows.push_back(b);
      }
      bool moved = false;
      for (std::size_t a : rows) {
        // Rows below nx_pairs carry x fixed and move y; the rest move x.
        const bool move_y = a < nx_pairs;
        const int fixed = move_y ? pairs[a].first : pairs[a].second;
        const int range = move_y ? Y_.size() : X_.size();
        double best = row[a];
        int arg = -1;
        for (int c = 0; c < range; ++c) {
          const double cost = move_y ? row_cost(a, fixed, c) : row_cost(a, c, fixed);
          if (cost < best) {
            best = cost;
            arg = c;
          }
        }
        if (arg >= 0 && best < current) {
          if (move_y)
            pairs[a].second = arg;
          else
            pairs[a].first = arg;
          moved = true;
          break;
        }
      }
      if (!moved) break;
      refresh();
    }
    return *std::max_element(row.begin(), row.end());
  }

 private:
  const FiniteMetricSpace& X_;
  const FiniteMetricSpace& Y_;
};

// Map every point of A to the point of B whose distance profile to the
// matched anchors is closest in sup norm.
inline std::vector<int> profile_match(const FiniteMetricSpace& A, const FiniteMetricSpace& B,
                                      const std::vector<int>& anchors_a,
                                      const std::vector<int>& anchors_b) {
  std::vector<int> out(static_cast<std::size_t>(A.size()), 0);
  for (int x = 0; x < A.size(); ++x) {
    double best = std::numeric_limits<double>::infinity();
    for (int y = 0; y < B.size(); ++y) {
      double w = 0.0;
      for (std::size_t i = 0; i < anchors_a.size() && w < best; ++i)
        w = std::max(w, std::abs(A(x, anchors_a[i]) - B(y, anchors_b[i])));
      if (w < best) {
        best = w;
        out[static_cast<std::size_t>(x)] = y;
      }
    }
  }
  return out;
}

inline std::vector<double> eccentricities(const FiniteMetricSpace& S) {
  std::vector<double> e(static_cast<std::size_t>(S.size()), 0.0);
  for (int i = 0; i < S.size(); ++i) e[static_cast<std::size_t>(i)] = S.distances().row(i).maxCoeff();
  return e;
}

}  // namespace detail

namespace detail {

inline GHBound gh_upper_oriented(const FiniteMetricSpace& X, const FiniteMetricSpace& Y,
                                 const GHOptions& opt) {
  const int nx = X.size(), ny = Y.size();
  if (nx == 0 || ny == 0) throw ValidationError("gh_upper: empty space");
  if (nx > opt.size_cap || ny > opt.size_cap)
    throw SizeCap("gh_upper: " + std::to_string(std::max(nx, ny)) + " points exceeds cap " +
                  std::to_string(opt.size_cap));
  if (opt.pin && (opt.pin->first < 0 || opt.pin->first >= nx || opt.pin->second < 0 ||
                  opt.pin->second >= ny))
    throw ValidationError("gh_upper: pinned pair out of range");

  GHBound best;
  best.value = std::numeric_limits<double>::infinity();
  auto consider = [&](std::vector<std::pair<int, int>> pairs, bool search) {
    if (search) detail::RelationSearch(X, Y).run(pairs, opt.search_rounds);
    const double dis = correspondence_distortion(X, Y, pairs);
    if (0.5 * dis < best.value) {
      best.value = 0.5 * dis;
      best.correspondence = {std::move(pairs), dis};
    }
  };
  auto from_maps = [&](const std::vector<int>& f, const std::vector<int>& g) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(nx + ny));
    for (int x = 0; x < nx; ++x) pairs.emplace_back(x, f[static_cast<std::size_t>(x)]);
    for (int y = 0; y < ny; ++y) pairs.emplace_back(g[static_cast<std::size_t>(y)], y);
    return pairs;
  };

  if (nx == 1 || ny == 1) {
    std::vector<int> f(static_cast<std::size_t>(nx), 0), g(static_cast<std::size_t>(ny), 0);
    consider(from_maps(f, g), false);
    return best;
  }
  if (nx == ny) {
    std::vector<int> id(static_cast<std::size_t>(nx));
    for (int i = 0; i < nx; ++i) id[static_cast<std::size_t>(i)] = i;
    consider(from_maps(id, id), false);
    if (best.value == 0.0) return best;
  }

  if (!opt.hint.empty()) {
    Correspondence c{opt.hint, 0.0};
    if (!is_correspondence(c, nx, ny)) throw ValidationError("gh_upper: hint is not a correspondence");
    consider(opt.hint, false);
    consider(opt.hint, true);
  }

  const auto ex = detail::eccentricities(X);
  const auto ey = detail::eccentricities(Y);
  std::mt19937_64 rng(opt.seed);
  const int k = std::clamp(opt.anchors, 1, std::min(nx, ny));
  for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
    int seed_x = opt.pin ? opt.pin->first
                         : static_cast<int>(std::uniform_int_distribution<int>(0, nx - 1)(rng));
    if (restart > 0 && opt.pin)
      seed_x = static_cast<int>(std::uniform_int_distribution<int>(0, nx - 1)(rng));
    const Net net = farthest_point_net(nx, [&](int a, int b) { return X(a, b); }, k, seed_x);
    const auto& ax = net.ids;

    // First image: the pinned partner, else the closest eccentricity.
    std::vector<int> first_candidates;
    if (opt.pin && ax[0] == opt.pin->first) {
      first_candidates.push_back(opt.pin->second);
    } else {
      std::vector<std::pair<double, int>> order;
      for (int y = 0; y < ny; ++y)
        order.emplace_back(std::abs(ey[static_cast<std::size_t>(y)] -
                                    ex[static_cast<std::size_t>(ax[0])]), y);
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i)
        first_candidates.push_back(order[i].second);
    }
    for (int b0 : first_candidates) {
      std::vector<int> ay{b0};
      for (std::size_t i = 1; i < ax.size(); ++i) {
        double bw = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int y = 0; y < ny; ++y) {
          double w = 0.0;
          for (std::size_t j = 0; j < i; ++j)
            w = std::max(w, std::abs(Y(y, ay[j]) - X(ax[i], ax[j])));
          if (w < bw) {
            bw = w;
            arg = y;
          }
        }
        ay.push_back(arg);
      }
      const auto f = detail::profile_match(X, Y, ax, ay);
      const auto g = detail::profile_match(Y, X, ay, ax);
      auto pairs = from_maps(f, g);
      if (opt.pin) pairs.emplace_back(opt.pin->first, opt.pin->second);
      consider(std::move(pairs), true);
    }
  }
  return best;
}

}  // namespace detail

// Runs the search from both sides and keeps the better relation, so the
// bound does not depend on argument order.
inline GHBound gh_upper(const FiniteMetricSpace& X, const FiniteMetricSpace& Y,
                        const GHOptions& opt = {}) {
  GHBound fwd = detail::gh_upper_oriented(X, Y, opt);
  if (fwd.value == 0.0) return fwd;
  GHOptions rev = opt;
  if (opt.pin) rev.pin = std::make_pair(opt.pin->second, opt.pin->first);
  for (auto& pr : rev.hint) std::swap(pr.first, pr.second);
  GHBound back = detail::gh_upper_oriented(Y, X, rev);
  if (!(back.value < fwd.value)) return fwd;
  for (auto& pr : back.correspondence.pairs) std::swap(pr.first, pr.second);
  return back;
}

namespace detail {

// Hausdorff distance between two sorted finite subsets of the real line.
inline double sorted_hausdorff(const std::vector<double>& a, const std::vector<double>& b) {
  auto one_sided = [](const std::vector<double>& p, const std::vector<double>& q) {
    double worst = 0.0;
    std::size_t j = 0;
    for (double v : p) {
      while (j + 1 < q.size() && q[j + 1] <= v) ++j;
      double d = std::abs(v - q[j]);
      if (j + 1 < q.size()) d = std::min(d, std::abs(q[j + 1] - v));
      worst = std::max(worst, d);
    }
    return worst;
  };
  return std::max(one_sided(a, b), one_sided(b, a));
}

inline std::vector<std::vector<double>> sorted_rows(const FiniteMetricSpace& S) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(S.size()));
  for (int i = 0; i < S.size(); ++i) {
    auto& r = rows[static_cast<std::size_t>(i)];
    r.resize(static_cast<std::size_t>(S.size()));
    for (int j = 0; j < S.size(); ++j) r[static_cast<std::size_t>(j)] = S(i, j);
    std::sort(r.begin(), r.end());
  }
  return rows;
}

}  // namespace detail

struct GHLower {
  double value = 0.0;
  double diameter_term = 0.0;
  double profile_term = 0.0;
};

// If (x, y) are related by R then every distance from x is within dis(R) of a
// distance from y and back, so the Hausdorff gap between the two distance sets
// is at most dis(R). Taking the worst best-match over either side gives a
// certified bound; ecc and diameter gaps are special cases.
inline GHLower gh_lower_report(const FiniteMetricSpace& X, const FiniteMetricSpace& Y) {
  GHLower out;
  if (X.size() == 0 || Y.size() == 0) return out;
  out.diameter_term = 0.5 * std::abs(X.diameter() - Y.diameter());
  const auto rx = detail::sorted_rows(X);
  const auto ry = detail::sorted_rows(Y);
  Eigen::MatrixXd h(X.size(), Y.size());
  for (int x = 0; x < X.size(); ++x)
    for (int y = 0; y < Y.size(); ++y)
      h(x, y) = detail::sorted_hausdorff(rx[static_cast<std::size_t>(x)],
                                         ry[static_cast<std::size_t>(y)]);
  const double sx = h.rowwise().minCoeff().maxCoeff();
  const double sy = h.colwise().minCoeff().maxCoeff();
  out.profile_term = 0.5 * std::max(sx, sy);
  out.value = std::max(out.diameter_term, out.profile_term);
  return out;
}

inline double gh_lower(const FiniteMetricSpace& X, const FiniteMetricSpace& Y) {
  return gh_lower_report(X, Y).value;
}

// ---------------------------------------------------------------------------
// Model spaces

// Euclidean distances between the rows of pts; coordinates are retained.
inline FiniteMetricSpace euclidean_space(const Eigen::MatrixXd& pts) {
  const Eigen::Index n = pts.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (pts.row(i) - pts.row(j)).norm();
  return FiniteMetricSpace(std::move(d), {}, pts);
}

// Cubic lattice with `per_side` points per axis and the given spacing,
// centred at the origin, row-major order.
inline FiniteMetricSpace flat_lattice(int dim, int per_side, double spacing) {
  if (dim < 1 || per_side < 1 || !(spacing > 0.0))
    throw ValidationError("flat_lattice: bad dimension, size or spacing");
  long long total = 1;
  for (int k = 0; k < dim; ++k) total *= per_side;
  if (total > 20000) throw SizeCap("flat_lattice: too many points");
  Eigen::MatrixXd pts(total, dim);
  const double c = 0.5 * (per_side - 1);
  for (long long i = 0; i < total; ++i) {
    long long rest = i;
    for (int k = dim - 1; k >= 0; --k) {
      pts(i, k) = (static_cast<double>(rest % per_side) - c) * spacing;
      rest /= per_side;
    }
  }
  return euclidean_space(pts);
}

// Euclidean cone over a circle of length 2*pi*h: polar mesh with `rings`
// rings of spacing radius/rings, ring k carrying `per_ring`*k points, the
// tip at index 0. Distances are exact: with angular gap a = h*dtheta, the
// distance is the chord 2 r1 r2 cos(a) law when a < pi and r1 + r2 otherwise.
inline FiniteMetricSpace sharp_cone_disk(double h, double radius, int rings, int per_ring = 6) {
  if (!(h > 0.0) || h > 1.0) throw ValidationError("sharp_cone_disk: h must lie in (0, 1]");
  if (!(radius > 0.0) || rings < 1 || per_ring < 1)
    throw ValidationError("sharp_cone_disk: bad radius or ring counts");
  std::vector<std::pair<double, double>> pol{{0.0, 0.0}};
  for (int k = 1; k <= rings; ++k) {
    const int m = per_ring * k;
    for (int j = 0; j < m; ++j)
      pol.emplace_back(radius * k / rings, 2.0 * std::numbers::pi * (j + 0.5 * (k % 2)) / m);
  }
  const auto n = static_cast<Eigen::Index>(pol.size());
  if (n > 20000) throw SizeCap("sharp_cone_disk: too many points");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd coords(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    coords(i, 0) = pol[i].first * std::cos(pol[i].second);
    coords(i, 1) = pol[i].first * std::sin(pol[i].second);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto [r1, t1] = pol[i];
      const auto [r2, t2] = pol[j];
      double dt = std::abs(t1 - t2);
      dt = std::min(dt, 2.0 * std::numbers::pi - dt);
      const double a = h * dt;
      d(i, j) = d(j, i) =
          a >= std::numbers::pi
              ? r1 + r2
              : std::sqrt(std::max(0.0, r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * std::cos(a)));
    }
  return FiniteMetricSpace(std::move(d), {}, std::move(coords));
}

// Rejection-sampled points in the Euclidean ball B_s(0^dim), thinned by
// farthest-point selection to `count` points. The origin is index 0.
inline FiniteMetricSpace sampled_euclidean_ball(int dim, double s, int count, std::uint64_t seed,
                                                int oversample = 8) {
  if (dim < 1 || !(s > 0.0) || count < 1) throw ValidationError("sampled_euclidean_ball: bad input");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-s, s);
  const int pool = std::max(count, count * oversample);
  Eigen::MatrixXd pts(pool, dim);
  pts.row(0).setZero();
  for (int i = 1; i < pool;) {
    Eigen::RowVectorXd p(dim);
    for (int k = 0; k < dim; ++k) p(k) = u(rng);
    if (p.norm() <= s) pts.row(i++) = p;
  }
  auto dist = [&](int a, int b) { return (pts.row(a) - pts.row(b)).norm(); };
  const Net net = farthest_point_net(pool, dist, count, 0);
  Eigen::MatrixXd chosen(static_cast<Eigen::Index>(net.ids.size()), dim);
  for (std::size_t i = 0; i < net.ids.size(); ++i) chosen.row(static_cast<Eigen::Index>(i)) = pts.row(net.ids[i]);
  return euclidean_space(chosen);
}

// ---------------------------------------------------------------------------
// Reifenberg classification

enum class Verdict { pass, fail, inconclusive, unresolved };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
    case Verdict::unresolved: return "unresolved";
  }
  return "?";
}

// Produces the Euclidean comparison ball for scale s. `ball` is the tested
// ball after thinning, centre first, so a generator can match its size.
using ReferenceBall = std::function<FiniteMetricSpace(double s, const FiniteMetricSpace& ball)>;

inline ReferenceBall sampled_reference(int dim, std::uint64_t seed = 7) {
  return [dim, seed](double s, const FiniteMetricSpace& ball) {
    return sampled_euclidean_ball(dim, s, ball.size(), seed);
  };
}

// Ball of radius s in a model space around a fixed point, thinned exactly as
// the tested ball is. Used when the tested space and its Euclidean model share
// a mesh structure (lattices, polar disks, flat cones).
inline ReferenceBall model_reference(FiniteMetricSpace model, int center, int ball_cap);

struct ClassifyOptions {
  int scale_count = 6;
  double resolution = -1.0;  // mesh spacing; < 0 means median nearest-neighbour distance
  double resolution_factor = 5.0;
  double relative_resolution = 0.0;  // spacing grows like this times s on conical meshes
  int ball_cap = 400;
  GHOptions gh{};
};

struct ScaleResult {
  double s = 0.0;
  int points = 0;
  double lower = 0.0;
  double upper = 0.0;
  Verdict verdict = Verdict::unresolved;
};

struct ReifenbergProfile {
  int point = -1;
  double eps = 0.0;
  double r = 0.0;
  double resolution = 0.0;
  std::vector<ScaleResult> scales;
  Verdict verdict = Verdict::unresolved;

  // Re-evaluates the stored bounds for another eps, keeping scales s < r.
  Verdict classify(double e, double radius) const {
    bool any = false, straddle = false;
    for (const auto& sc : scales) {
      if (sc.verdict == Verdict::unresolved || !(sc.s < radius)) continue;
      any = true;
      if (sc.lower >= e * sc.s) return Verdict::fail;
      if (!(sc.upper < e * sc.s)) straddle = true;
    }
    if (!any) return Verdict::unresolved;
    return straddle ? Verdict::inconclusive : Verdict::pass;
  }
};

inline double median_neighbor_distance(const FiniteMetricSpace& space) {
  std::vector<double> nn;
  for (int i = 0; i < space.size(); ++i) {
    double m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < space.size(); ++j)
      if (j != i && space(i, j) > 0.0) m = std::min(m, space(i, j));
    if (std::isfinite(m)) nn.push_back(m);
  }
  if (nn.empty()) return 0.0;
  std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2), nn.end());
  return nn[nn.size() / 2];
}

// Dyadic scales 2^-k strictly below r, largest first.
inline std::vector<double> dyadic_scales(double r, int count) {
  if (!(r > 0.0) || count < 1) throw ValidationError("dyadic_scales: need r > 0 and count >= 1");
  std::vector<double> s;
  double v = std::exp2(std::ceil(std::log2(r)) - 1.0);
  if (v >= r) v *= 0.5;
  for (int k = 0; k < count; ++k, v *= 0.5) s.push_back(v);
  return s;
}

// The ball B_s(center), centre first, thinned to at most `cap` points by
// farthest-point selection started at the centre.
inline FiniteMetricSpace thinned_ball(const FiniteMetricSpace& space, int center, double s, int cap) {
  // Closed ball, with slack for rounding in lattice distances.
  const PointedBall b = restrict_ball(space, center, s * (1.0 + 1e-9));
  std::vector<int> ids{center};
  for (int m : b.members)
    if (m != center) ids.push_back(m);
  FiniteMetricSpace ball = space.subspace(ids);
  if (ball.size() <= cap) return ball;
  const Net net = farthest_point_net(ball.size(), [&](int a, int c) { return ball(a, c); }, cap, 0);
  std::vector<int> keep = net.ids;
  std::sort(keep.begin(), keep.end());
  return ball.subspace(keep);
}

inline ReferenceBall model_reference(FiniteMetricSpace model, int center, int ball_cap) {
  return [model = std::move(model), center, ball_cap](double s, const FiniteMetricSpace&) {
    return thinned_ball(model, center, s, ball_cap);
  };
}

namespace detail {

// Shared per-scale loop; `balls` yields the tested and the reference ball
// for scale s plus an optional candidate relation between them.
struct ScaleBalls {
  FiniteMetricSpace tested;
  FiniteMetricSpace reference;
  std::vector<std::pair<int, int>> hint;
};

template <class MakeBalls>
ReifenbergProfile classify_core(int y, double eps, double r, double resolution,
                                const ClassifyOptions& opt, MakeBalls&& balls) {
  if (!(eps > 0.0)) throw ValidationError("reifenberg_classify: eps must be positive");
  ReifenbergProfile prof;
  prof.point = y;
  prof.eps = eps;
  prof.r = r;
  prof.resolution = resolution;
  for (double s : dyadic_scales(r, opt.scale_count)) {
    ScaleResult sc;
    sc.s = s;
    const double spacing = std::max(resolution, opt.relative_resolution * s);
    if (s < opt.resolution_factor * spacing) {
      prof.scales.push_back(sc);
      continue;
    }
    const ScaleBalls b = balls(s);
    sc.points = b.tested.size();
    GHOptions gh = opt.gh;
    gh.pin = std::make_pair(0, 0);
    gh.hint = b.hint;
    sc.upper = gh_upper(b.tested, b.reference, gh).value;
    sc.lower = std::min(gh_lower(b.tested, b.reference), sc.upper);
    sc.verdict = sc.lower >= eps * s ? Verdict::fail
                 : sc.upper < eps * s ? Verdict::pass
                                      : Verdict::inconclusive;
    prof.scales.push_back(sc);
  }
  prof.verdict = prof.classify(eps, r);
  if (prof.verdict == Verdict::unresolved)
    throw ScaleBelowResolution("every tested scale is below " +
                               std::to_string(opt.resolution_factor) + " x mesh spacing " +
                               std::to_string(resolution));
  return prof;
}

}  // namespace detail

inline ReifenbergProfile reifenberg_classify(const FiniteMetricSpace& space, int y, double eps,
                                             double r, const ReferenceBall& reference,
                                             const ClassifyOptions& opt = {}) {
  if (y < 0 || y >= space.size()) throw ValidationError("reifenberg_classify: point out of range");
  const double res = opt.resolution >= 0.0 ? opt.resolution : median_neighbor_distance(space);
  return detail::classify_core(y, eps, r, res, opt, [&](double s) {
    detail::ScaleBalls b{thinned_ball(space, y, s, opt.ball_cap), {}, {}};
    b.reference = reference(s, b.tested);
    return b;
  });
}

// Variant for a space whose Euclidean model `twin` lives on the same point
// ids (a warped cone and its flat cone, for instance). Both balls are thinned
// with the same ids, chosen in the twin. `twin_image`, when given, sends a
// point to the twin point it should correspond to and seeds the search.
inline ReifenbergProfile reifenberg_classify_twin(const FiniteMetricSpace& space,
                                                  const FiniteMetricSpace& twin, int y, double eps,
                                                  double r, const ClassifyOptions& opt = {},
                                                  const std::vector<int>& twin_image = {}) {
  if (space.size() != twin.size()) throw ValidationError("reifenberg_classify_twin: size mismatch");
  if (y < 0 || y >= space.size()) throw ValidationError("reifenberg_classify: point out of range");
  if (!twin_image.empty() && static_cast<int>(twin_image.size()) != space.size())
    throw ValidationError("reifenberg_classify_twin: twin_image size mismatch");
  const double res = opt.resolution >= 0.0 ? opt.resolution : median_neighbor_distance(twin);
  auto thin = [&](const std::vector<int>& members) {
    std::vector<int> ids{y};
    for (int m : members)
      if (m != y) ids.push_back(m);
    if (static_cast<int>(ids.size()) <= opt.ball_cap) return ids;
    const Net net = farthest_point_net(static_cast<int>(ids.size()),
                                       [&](int a, int c) { return twin(ids[a], ids[c]); },
                                       opt.ball_cap, 0);
    std::vector<int> keep;
    for (int k : net.ids) keep.push_back(ids[static_cast<std::size_t>(k)]);
    std::sort(keep.begin() + 1, keep.end());
    return keep;
  };
  return detail::classify_core(y, eps, r, res, opt, [&](double s) {
    const auto tx = thin(restrict_ball(space, y, s).members);
    const auto ty = thin(restrict_ball(twin, y, s).members);
    detail::ScaleBalls b{space.subspace(tx), twin.subspace(ty), {}};
    if (!twin_image.empty()) {
      auto nearest = [&](int target, const std::vector<int>& pool) {
        int arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < pool.size(); ++k) {
          const double d = twin(target, pool[k]);
          if (d < best) {
            best = d;
            arg = static_cast<int>(k);
          }
        }
        return arg;
      };
      for (std::size_t a = 0; a < tx.size(); ++a)
        b.hint.emplace_back(static_cast<int>(a), nearest(twin_image[static_cast<std::size_t>(tx[a])], ty));
      std::vector<int> images;
      for (int x : tx) images.push_back(twin_image[static_cast<std::size_t>(x)]);
      for (std::size_t c = 0; c < ty.size(); ++c) b.hint.emplace_back(nearest(ty[c], images), static_cast<int>(c));
    }
    return b;
  });
}

struct UniformRow {
  double eps = 0.0;
  double r = 0.0;  // largest passing grid radius, 0 when none passes
};

// For each eps, the largest r on r_grid such that every net point passes.
// Bounds are computed once per point and scale and reused for every eps.
inline std::vector<UniformRow> uniform_profile(const FiniteMetricSpace& space,
                                               const std::vector<int>& net,
                                               const std::vector<double>& eps_grid,
                                               const std::vector<double>& r_grid,
                                               const ReferenceBall& reference,
                                               ClassifyOptions opt = {}) {
  if (net.empty() || r_grid.empty()) throw ValidationError("uniform_profile: empty net or r grid");
  const double r_top = *std::max_element(r_grid.begin(), r_grid.end());
  if (opt.resolution < 0.0) opt.resolution = median_neighbor_distance(space);
  std::vector<ReifenbergProfile> profs;
  for (int p : net) {
    try {
      profs.push_back(reifenberg_classify(space, p, 1.0, r_top, reference, opt));
    } catch (const ScaleBelowResolution&) {
      ReifenbergProfile empty;
      empty.point = p;
      profs.push_back(empty);
    }
  }
  std::vector<double> rs = r_grid;
  std::sort(rs.begin(), rs.end());
  std::vector<double> es = eps_grid;
  std::sort(es.begin(), es.end());
  std::vector<UniformRow> out;
  for (double e : es) {
    UniformRow row{e, 0.0};
    for (double rr : rs) {
      const bool all = std::all_of(profs.begin(), profs.end(), [&](const ReifenbergProfile& pr) {
        return pr.classify(e, rr) == Verdict::pass;
      });
      if (all) row.r = rr;
    }
    out.push_back(row);
  }
  return out;
}

inline void write_classification_csv(std::ostream& os, const std::vector<ReifenbergProfile>& ps) {
  os << "point,eps,r,verdict\n";
  for (const auto& p : ps) os << p.point << ',' << p.eps << ',' << p.r << ',' << to_string(p.verdict) << '\n';
}

}  // namespace rlab
