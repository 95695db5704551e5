#pragma once

// Warped cones dr^2 + r^2 h(r)^2 g_{f(r)} over S^2, where g_s is the pullback
// of the round metric by a DiffeoFamily, plus a C^{0,beta} angle-drift model.

#include "rlab/errors.hpp"
#include "rlab/metric_core.hpp"
#include "rlab/smoothstep.hpp"
#include "rlab/sphere.hpp"
#include "rlab/sphere_flow.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <tuple>
#include <vector>

namespace rlab {

// ---------------------------------------------------------------------------
// Warp profiles

struct WarpProfile {
  std::function<double(double)> h;
  std::function<double(double)> f;
  double h_inf = 0.5;
  std::optional<double> freeze_radius;
};

inline double default_f(double r) {
  const double l = std::log(r);
  return l < 0 ? -std::sqrt(-l) : std::sqrt(l);
}

// h = 1 - (1 - h_inf) * sigma((ln r - a) / 2) with sigma the septic step on
// [0, 1], so h is identically 1 below e^a. a = max(0, ln freeze_radius).
inline WarpProfile default_profile(double h_inf, std::optional<double> freeze_radius = {}) {
  if (!(h_inf > 0.0 && h_inf < 1.0)) throw ConstraintViolated("default_profile: need 0 < h_inf < 1");
  if (freeze_radius && !(*freeze_radius > 0.0))
    throw ConstraintViolated("default_profile: freeze radius must be positive");
  const double a = freeze_radius ? std::max(0.0, std::log(*freeze_radius)) : 0.0;
  WarpProfile p;
  p.h_inf = h_inf;
  p.freeze_radius = freeze_radius;
  p.f = default_f;
  p.h = [h_inf, a](double r) { return 1.0 - (1.0 - h_inf) * smoothstep(0.5 * (std::log(r) - a)); };
  return p;
}

// h = 1: with an identity family this is flat R^3.
inline WarpProfile flat_profile() {
  WarpProfile p;
  p.h_inf = 1.0;
  p.f = default_f;
  p.h = [](double) { return 1.0; };
  return p;
}

struct ProfileCheck {
  double h_at_small = 0.0;
  double h_at_large = 0.0;
  double rfprime_small = 0.0;  // r f'(r) at r = e^-limit
  double rfprime_large = 0.0;
  bool f_monotone = true;
  bool rfprime_decays = true;
  bool frozen_exact = true;
  bool passed = false;
};

// Numeric versions of the asymptotic constraints, on a log grid in
// [e^-limit, e^limit]. Throws ConstraintViolated when any fails.
inline ProfileCheck check_profile(const WarpProfile& p, double limit = 40.0, int samples = 4001,
                                  double tol = 1e-6) {
  ProfileCheck c;
  auto rfp = [&](double l) {
    const double dl = 1e-5;
    return (p.f(std::exp(l + dl)) - p.f(std::exp(l - dl))) / (2 * dl);
  };
  double prev_f = -std::numeric_limits<double>::infinity();
  double prev_tail = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    const double l = -limit + 2.0 * limit * k / (samples - 1);
    const double r = std::exp(l);
    const double fv = p.f(r);
    if (!(fv > prev_f)) c.f_monotone = false;
    prev_f = fv;
    if (p.freeze_radius && r <= *p.freeze_radius && p.h(r) != 1.0) c.frozen_exact = false;
    if (std::abs(l) >= 2.0) {
      // r f' must decrease toward both ends: scan the tails outward.
      const double tail = rfp(-std::abs(l)) + rfp(std::abs(l));
      if (l > 0 && !(tail <= prev_tail)) c.rfprime_decays = false;
      if (l > 0) prev_tail = tail;
    }
  }
  c.h_at_small = p.h(std::exp(-limit));
  c.h_at_large = p.h(std::exp(limit));
  c.rfprime_small = rfp(-limit);
  c.rfprime_large = rfp(limit);
  const double decay = 1.0 / std::sqrt(limit);
  c.passed = c.f_monotone && c.rfprime_decays && c.frozen_exact &&
             std::abs(c.h_at_small - 1.0) <= tol && std::abs(c.h_at_large - p.h_inf) <= tol &&
             p.f(std::exp(-limit)) < -0.5 * std::sqrt(limit) &&
             p.f(std::exp(limit)) > 0.5 * std::sqrt(limit) && c.rfprime_small < decay &&
             c.rfprime_large < decay;
  if (!c.passed) throw ConstraintViolated("check_profile: warp profile constraints fail");
  return c;
}

// ---------------------------------------------------------------------------
// Cone mesh

struct ConeMeshOptions {
  double r_min = std::exp(-22.5);
  double r_max = std::exp(-0.5);
  int shells = 0;           // 0: spacing in ln r matched to the sphere spacing
  int sphere_points = 1500;
  int sphere_k = 8;         // in-shell neighbours
  int max_points = 2000000;
};

// Point of the continuous cone in (ln r, direction) form.
struct ConePoint {
  double log_r = 0.0;
  Vec3 u = Vec3::UnitZ();
};

struct ConeDistance {
  double graph = 0.0;    // Dijkstra over the shell graph
  double refined = 0.0;  // after continuous path shortening
  bool via_tip = false;  // the path through the tip is no longer
  std::vector<ConePoint> path;
};

struct AngleSample {
  double t = 0.0;
  double s = 0.0;  // f(t)
  double angle_mesh = 0.0;
  double angle_graph = 0.0;
  double angle_chord = 0.0;
  double active_target = std::numeric_limits<double>::quiet_NaN();
};

class ConeSpace {
 public:
  ConeSpace(WarpProfile profile, DiffeoFamily family, ConeMeshOptions opt,
            const std::vector<Vec3>& anchors = {})
      : profile_(std::move(profile)), family_(std::move(family)), opt_(opt) {
    if (!(opt.r_min > 0.0 && opt.r_min < opt.r_max)) throw ValidationError("mesh_cone: need 0 < r_min < r_max");
    if (opt.sphere_points < 12 || opt.sphere_k < 3) throw ValidationError("mesh_cone: sphere mesh too coarse");
    for (const auto& a : anchors) dirs_.push_back(a.normalized());
    for (const auto& p : sphere::fibonacci_points(opt.sphere_points)) dirs_.push_back(p);
    const double span = std::log(opt.r_max / opt.r_min);
    int shells = opt.shells;
    if (shells <= 0) {
      const double spacing = std::sqrt(4.0 * std::numbers::pi / opt.sphere_points);
      shells = static_cast<int>(std::ceil(span / spacing)) + 1;
    }
    if (shells < 2) throw ValidationError("mesh_cone: need at least two shells");
    if (static_cast<long long>(shells) * static_cast<long long>(dirs_.size()) > opt.max_points)
      throw ResourceCap("mesh_cone: point count exceeds the configured limit");
    dlog_ = span / (shells - 1);
    log_rmin_ = std::log(opt.r_min);
    radii_.resize(static_cast<std::size_t>(shells));
    for (int k = 0; k < shells; ++k) radii_[static_cast<std::size_t>(k)] = std::exp(log_rmin_ + k * dlog_);

    const int n = static_cast<int>(dirs_.size());
    const WeightedGraph g = knn_graph(dirs_, opt.sphere_k, [](const Vec3& a, const Vec3& b) {
      return sphere::distance(a, b);
    });
    nbrs_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      for (const auto& e : g.adjacency[static_cast<std::size_t>(i)]) nbrs_[static_cast<std::size_t>(i)].push_back(e.to);

    // Images under phi_{f(r)} at every shell and every geometric midpoint.
    const int halves = 2 * shells - 1;
    mapped_.resize(static_cast<std::size_t>(halves));
    hscale_.resize(static_cast<std::size_t>(halves));
    for (int q = 0; q < halves; ++q) {
      const double r = std::exp(log_rmin_ + 0.5 * q * dlog_);
      const double s = profile_.f(r);
      hscale_[static_cast<std::size_t>(q)] = profile_.h(r);
      auto& row = mapped_[static_cast<std::size_t>(q)];
      row.resize(static_cast<std::size_t>(n));
      if (family_.segment_at(s) == nullptr) {
        row = dirs_;
      } else {
        for (int i = 0; i < n; ++i) row[static_cast<std::size_t>(i)] = family_.map(s, dirs_[static_cast<std::size_t>(i)]);
      }
    }
  }

  const WarpProfile& profile() const { return profile_; }
  const DiffeoFamily& family() const { return family_; }
  const ConeMeshOptions& options() const { return opt_; }
  const std::vector<double>& radii() const { return radii_; }
  const std::vector<Vec3>& directions() const { return dirs_; }
  int shells() const { return static_cast<int>(radii_.size()); }
  int sphere_size() const { return static_cast<int>(dirs_.size()); }
  long long point_count() const { return static_cast<long long>(shells()) * sphere_size() + 1; }
  double log_spacing() const { return dlog_; }
  double radial_step(int shell) const {
    return shell + 1 < shells() ? radii_[static_cast<std::size_t>(shell) + 1] - radii_[static_cast<std::size_t>(shell)]
                                : radii_.back() * (1.0 - std::exp(-dlog_));
  }

  int nearest_shell(double t) const {
    const double k = (std::log(t) - log_rmin_) / dlog_;
    return std::clamp(static_cast<int>(std::lround(k)), 0, shells() - 1);
  }

  // Local flat-cone length between shell nodes; the sphere factor is measured
  // with g_s at the geometric-mean radius, exactly through the isometry phi_s.
  double edge_length(int sa, int i, int sb, int j) const {
    const auto q = static_cast<std::size_t>(sa + sb);
    const double ra = radii_[static_cast<std::size_t>(sa)];
    const double rb = radii_[static_cast<std::size_t>(sb)];
    const auto& row = mapped_[q];
    const double alpha =
        hscale_[q] * sphere::distance(row[static_cast<std::size_t>(i)], row[static_cast<std::size_t>(j)]);
    return chord(ra, rb, alpha);
  }

  // Same formula between arbitrary points of the continuous cone.
  double segment_length(const ConePoint& a, const ConePoint& b) const {
    const double rm = std::exp(0.5 * (a.log_r + b.log_r));
    const double s = profile_.f(rm);
    const double alpha = profile_.h(rm) * pullback_distance(family_, s, a.u, b.u);
    return chord(std::exp(a.log_r), std::exp(b.log_r), alpha);
  }

  // The analytic cone-chord distance between (t, y) and (t, z): the cone over
  // (S^2, h(t)^2 g_{f(t)}) frozen at t.
  double chord_distance(const Vec3& y, const Vec3& z, double t) const {
    const double alpha = profile_.h(t) * pullback_distance(family_, profile_.f(t), y, z);
    return chord(t, t, std::min(alpha, std::numbers::pi));
  }

  // Distance between (shell, a) and (shell, b): Dijkstra over the shells with
  // radius in [t/32, 4t], then shortening of the resulting path, compared
  // with the length 2t of the path through the tip.
  ConeDistance distance(int a, int b, int shell, int refine_levels = 3) const {
    const double t = radii_[static_cast<std::size_t>(shell)];
    const int lo = nearest_shell(t / 32.0);
    const int hi = std::min(shells() - 1, nearest_shell(4.0 * t));
    const int n = sphere_size();
    const int layers = hi - lo + 1;
    WeightedGraph g(layers * n);
    auto id = [&](int k, int i) { return (k - lo) * n + i; };
    for (int k = lo; k <= hi; ++k)
      for (int i = 0; i < n; ++i) {
        for (int j : nbrs_[static_cast<std::size_t>(i)])
          if (j > i) g.add_edge(id(k, i), id(k, j), edge_length(k, i, k, j));
        if (k < hi) {
          g.add_edge(id(k, i), id(k + 1, i), edge_length(k, i, k + 1, i));
          for (int j : nbrs_[static_cast<std::size_t>(i)]) g.add_edge(id(k, i), id(k + 1, j), edge_length(k, i, k + 1, j));
        }
      }
    // No tip edges: the path through the tip has length exactly 2t and
    // caps both results.
    const ShortestPathTree tree = dijkstra(g, id(shell, a));
    ConeDistance out;
    out.graph = tree.dist[static_cast<std::size_t>(id(shell, b))];
    if (a == b) return out;
    std::vector<ConePoint> path;
    for (int v = id(shell, b); v != -1; v = tree.pred[static_cast<std::size_t>(v)])
      path.push_back({log_rmin_ + (lo + v / n) * dlog_, dirs_[static_cast<std::size_t>(v % n)]});
    std::reverse(path.begin(), path.end());
    const double refined = shorten(path, refine_levels);
    out.via_tip = refined >= 2.0 * t || out.graph >= 2.0 * t;
    out.graph = std::min(out.graph, 2.0 * t);
    out.refined = std::min(refined, 2.0 * t);
    out.path = std::move(path);
    return out;
  }

  // Sphere points are addressed by index into directions().
  AngleSample angle_at_scale(int y, int z, double t, int refine_levels = 3) const {
    if (!(t > opt_.r_min && t < opt_.r_max)) throw OutOfMeshRange("angle_at_scale: t outside the mesh");
    const int shell = nearest_shell(t);
    const double ts = radii_[static_cast<std::size_t>(shell)];
    AngleSample out;
    out.t = ts;
    out.s = profile_.f(ts);
    if (const FlowSegment* seg = family_.segment_at(out.s)) {
      const double v = seg->local(out.s);
      if (v > family_.profile().plateau_begin() && v < family_.profile().plateau_end()) {
        for (const auto& e : entries_)
          if (out.s >= e.s_begin && out.s <= e.s_end) out.active_target = e.theta;
      }
    }
    if (y == z) return out;
    const ConeDistance d = distance(y, z, shell, refine_levels);
    out.angle_mesh = angle(ts, ts, d.refined, 1e-6);
    out.angle_graph = angle(ts, ts, std::min(d.graph, 2.0 * ts), 1e-6);
    out.angle_chord = angle(ts, ts, chord_distance(dirs_[static_cast<std::size_t>(y)], dirs_[static_cast<std::size_t>(z)], ts), 1e-6);
    return out;
  }

  std::vector<AngleSample> angle_trace(int y, int z, const std::vector<double>& t_grid,
                                       int refine_levels = 3) const {
    std::vector<AngleSample> out;
    for (double t : t_grid) out.push_back(angle_at_scale(y, z, t, refine_levels));
    return out;
  }

  // Schedule entries used to label the active target of a sample.
  void set_schedule_entries(std::vector<ScheduleEntry> e) { entries_ = std::move(e); }

  // Explicit FiniteMetricSpace over shells [lo, hi] plus the tip (last point),
  // with volume weights r^3 h^2 dlog * (4 pi / N) and ambient coords r u.
  FiniteMetricSpace metric_space(int lo, int hi, long long cap = 6000) const {
    if (lo < 0 || hi >= shells() || lo > hi) throw OutOfMeshRange("metric_space: shell range");
    const int n = sphere_size();
    const long long count = static_cast<long long>(hi - lo + 1) * n + 1;
    if (count > cap) throw SizeCap("metric_space: point count exceeds cap");
    const int tip = static_cast<int>(count) - 1;
    WeightedGraph g(tip + 1);
    std::vector<double> w(static_cast<std::size_t>(count), 0.0);
    Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(count, 3);
    auto id = [&](int k, int i) { return (k - lo) * n + i; };
    const double cell = 4.0 * std::numbers::pi / n;
    for (int k = lo; k <= hi; ++k) {
      const double r = radii_[static_cast<std::size_t>(k)];
      const double h = hscale_[static_cast<std::size_t>(2 * k)];
      for (int i = 0; i < n; ++i) {
        w[static_cast<std::size_t>(id(k, i))] = r * r * r * h * h * dlog_ * cell;
        coords.row(id(k, i)) = r * dirs_[static_cast<std::size_t>(i)].transpose();
        for (int j : nbrs_[static_cast<std::size_t>(i)])
          if (j > i) g.add_edge(id(k, i), id(k, j), edge_length(k, i, k, j));
        if (k < hi) {
          g.add_edge(id(k, i), id(k + 1, i), edge_length(k, i, k + 1, i));
          for (int j : nbrs_[static_cast<std::size_t>(i)]) g.add_edge(id(k, i), id(k + 1, j), edge_length(k, i, k + 1, j));
        }
      }
    }
    for (int i = 0; i < n; ++i) g.add_edge(id(lo, i), tip, radii_[static_cast<std::size_t>(lo)]);
    return graph_metric(g, std::move(w), std::move(coords));
  }

 private:
  static double chord(double ra, double rb, double alpha) {
    const double c2 = ra * ra + rb * rb - 2.0 * ra * rb * std::cos(alpha);
    return std::sqrt(std::max(0.0, c2));
  }

  double path_length(const std::vector<ConePoint>& p) const {
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) total += segment_length(p[k], p[k + 1]);
    return total;
  }

  // Coarse-to-fine shortening with endpoints fixed: Levenberg-Marquardt on the
  // discrete energy sum L_k^2, whose minimizers are evenly spaced discrete
  // geodesics. Derivatives are finite differences in per-node charts
  // (ln r, tangent plane); the Hessian is block tridiagonal.
  double shorten(std::vector<ConePoint>& path, int levels) const {
    for (int level = 0; level <= levels; ++level) {
      if (level > 0) {
        std::vector<ConePoint> fine;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
          fine.push_back(path[k]);
          fine.push_back({0.5 * (path[k].log_r + path[k + 1].log_r),
                          Vec3(path[k].u + path[k + 1].u).normalized()});
        }
        fine.push_back(path.back());
        path = std::move(fine);
      }
      minimize_energy(path);
    }
    return path_length(path);
  }

  static ConePoint moved(const ConePoint& p, const Eigen::Vector3d& x) {
    const auto [e1, e2] = sphere::tangent_frame(p.u);
    return {p.log_r + x(0), sphere::exp_map(p.u, x(1) * e1 + x(2) * e2)};
  }

  double energy(const std::vector<ConePoint>& p) const {
    double e = 0.0;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
      const double l = segment_length(p[k], p[k + 1]);
      e += l * l;
    }
    return e;
  }

  void minimize_energy(std::vector<ConePoint>& path) const {
    const int m = static_cast<int>(path.size()) - 2;  // free nodes
    if (m < 1) return;
    const int dim = 3 * m;
    double mu = 1e-6;
    double e_now = energy(path);
    for (int iter = 0; iter < 60; ++iter) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
      std::vector<Eigen::Triplet<double>> trip;
      for (int k = 0; k + 1 < static_cast<int>(path.size()); ++k) {
        // Edge between nodes k and k+1; free node n has unknowns 3(n-1)..3(n-1)+2.
        const ConePoint& a = path[static_cast<std::size_t>(k)];
        const ConePoint& b = path[static_cast<std::size_t>(k) + 1];
        const double len = segment_length(a, b);
        const double h = 1e-4 * std::max(len / std::exp(0.5 * (a.log_r + b.log_r)), 1e-8);
        std::vector<int> var;  // local index -> global unknown, node-major
        std::vector<int> slot;
        if (k >= 1) for (int c = 0; c < 3; ++c) { var.push_back(3 * (k - 1) + c); slot.push_back(c); }
        if (k + 1 <= m) for (int c = 0; c < 3; ++c) { var.push_back(3 * k + c); slot.push_back(3 + c); }
        const int nv = static_cast<int>(var.size());
        auto e_of = [&](const Eigen::Matrix<double, 6, 1>& x) {
          const double l = segment_length(moved(a, x.head<3>()), moved(b, x.tail<3>()));
          return l * l;
        };
        const double f0 = len * len;
        Eigen::Matrix<double, 6, 1> z = Eigen::Matrix<double, 6, 1>::Zero();
        std::vector<double> fp(static_cast<std::size_t>(nv)), fm(static_cast<std::size_t>(nv));
        for (int p = 0; p < nv; ++p) {
          auto x = z;
          x(slot[static_cast<std::size_t>(p)]) = h;
          fp[static_cast<std::size_t>(p)] = e_of(x);
          x(slot[static_cast<std::size_t>(p)]) = -h;
          fm[static_cast<std::size_t>(p)] = e_of(x);
          grad(var[static_cast<std::size_t>(p)]) += (fp[static_cast<std::size_t>(p)] - fm[static_cast<std::size_t>(p)]) / (2 * h);
          trip.emplace_back(var[static_cast<std::size_t>(p)], var[static_cast<std::size_t>(p)],
                            (fp[static_cast<std::size_t>(p)] - 2 * f0 + fm[static_cast<std::size_t>(p)]) / (h * h));
          for (int q = 0; q < p; ++q) {
            auto y = z;
            y(slot[static_cast<std::size_t>(p)]) = h;
            y(slot[static_cast<std::size_t>(q)]) = h;
            const double fpp = e_of(y);
            y(slot[static_cast<std::size_t>(q)]) = -h;
            const double fpm = e_of(y);
            y(slot[static_cast<std::size_t>(p)]) = -h;
            const double fmm = e_of(y);
            y(slot[static_cast<std::size_t>(q)]) = h;
            const double fmp = e_of(y);
            const double v = (fpp - fpm - fmp + fmm) / (4 * h * h);
            trip.emplace_back(var[static_cast<std::size_t>(p)], var[static_cast<std::size_t>(q)], v);
            trip.emplace_back(var[static_cast<std::size_t>(q)], var[static_cast<std::size_t>(p)], v);
          }
        }
      }
      Eigen::SparseMatrix<double> H(dim, dim);
      H.setFromTriplets(trip.begin(), trip.end());
      const double diag_scale = std::max(1e-300, H.diagonal().cwiseAbs().maxCoeff());
      bool improved = false;
      for (int tries = 0; tries < 30 && !improved; ++tries) {
        Eigen::SparseMatrix<double> A = H;
        for (int i = 0; i < dim; ++i) A.coeffRef(i, i) += mu * diag_scale;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
        Eigen::VectorXd step;
        if (solver.info() == Eigen::Success) step = -solver.solve(grad);
        if (solver.info() != Eigen::Success || !step.allFinite() ||
            (solver.vectorD().array() <= 0).any()) {
          mu *= 10;
          continue;
        }
        std::vector<ConePoint> trial = path;
        for (int n = 0; n < m; ++n)
          trial[static_cast<std::size_t>(n) + 1] = moved(path[static_cast<std::size_t>(n) + 1], step.segment<3>(3 * n));
        const double e_trial = energy(trial);
        if (e_trial < e_now) {
          const double gain = e_now - e_trial;
          path = std::move(trial);
          e_now = e_trial;
          mu = std::max(mu * 0.2, 1e-12);
          improved = true;
          if (gain <= 1e-14 * e_now) return;
        } else {
          mu *= 10;
        }
      }
      if (!improved) return;
    }
  }

  WarpProfile profile_;
  DiffeoFamily family_;
  ConeMeshOptions opt_;
  std::vector<Vec3> dirs_;
  std::vector<std::vector<int>> nbrs_;
  std::vector<double> radii_;
  std::vector<std::vector<Vec3>> mapped_;
  std::vector<double> hscale_;
  std::vector<ScheduleEntry> entries_;
  double dlog_ = 0.0;
  double log_rmin_ = 0.0;
};

inline ConeSpace mesh_cone(WarpProfile profile, DiffeoFamily family, ConeMeshOptions opt,
                           const std::vector<Vec3>& anchors = {}) {
  return ConeSpace(std::move(profile), std::move(family), opt, anchors);
}

// For each target, the t-values of samples whose mesh angle is within tol.
inline std::vector<std::vector<double>> attainment(const std::vector<AngleSample>& trace,
                                                   const std::vector<double>& targets, double tol) {
  std::vector<std::vector<double>> out(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k)
    for (const auto& s : trace)
      if (std::abs(s.angle_mesh - targets[k]) <= tol) out[k].push_back(s.t);
  return out;
}

inline void write_trace_csv(std::ostream& os, const std::vector<AngleSample>& trace) {
  os << "t,s,angle_mesh,angle_graph,angle_chord,active_target\n";
  os.precision(12);
  for (const auto& s : trace) {
    os << s.t << ',' << s.s << ',' << s.angle_mesh << ',' << s.angle_graph << ',' << s.angle_chord << ',';
    if (std::isfinite(s.active_target)) os << s.active_target;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Curvature

// Ricci tensor of a metric field in coordinates, from central differences:
// Christoffel symbols from metric differences, Ricci from Christoffel
// differences. D is the dimension.
template <int D, class MetricFn>
Eigen::Matrix<double, D, D> ricci_tensor(MetricFn&& g, const Eigen::Matrix<double, D, 1>& x, double h) {
  using Mat = Eigen::Matrix<double, D, D>;
  using Vec = Eigen::Matrix<double, D, 1>;
  using Gamma = std::array<Mat, D>;  // Gamma[k](i, j)
  auto christoffel = [&](const Vec& p) {
    std::array<Mat, D> dg;  // dg[l] = d_l g
    for (int l = 0; l < D; ++l) {
      Vec e = Vec::Zero();
      e(l) = h;
      dg[static_cast<std::size_t>(l)] = (g(Vec(p + e)) - g(Vec(p - e))) / (2 * h);
    }
    const Mat ginv = g(p).inverse();
    Gamma G;
    for (int k = 0; k < D; ++k) {
      Mat& gk = G[static_cast<std::size_t>(k)];
      gk.setZero();
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j)
          for (int l = 0; l < D; ++l)
            gk(i, j) += 0.5 * ginv(k, l) *
                        (dg[static_cast<std::size_t>(i)](j, l) + dg[static_cast<std::size_t>(j)](i, l) -
                         dg[static_cast<std::size_t>(l)](i, j));
    }
    return G;
  };
  const Gamma G = christoffel(x);
  std::array<Gamma, D> dG;  // dG[m] = d_m Gamma
  for (int m = 0; m < D; ++m) {
    Vec e = Vec::Zero();
    e(m) = h;
    const Gamma gp = christoffel(Vec(x + e)), gm = christoffel(Vec(x - e));
    for (int k = 0; k < D; ++k)
      dG[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
          (gp[static_cast<std::size_t>(k)] - gm[static_cast<std::size_t>(k)]) / (2 * h);
  }
  Mat ric = Mat::Zero();
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      double v = 0.0;
      for (int k = 0; k < D; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        v += dG[ks][ks](i, j) - dG[static_cast<std::size_t>(j)][ks](i, k);
        for (int l = 0; l < D; ++l) {
          const auto ls = static_cast<std::size_t>(l);
          v += G[ks](k, l) * G[ls](i, j) - G[ks](j, l) * G[ls](i, k);
        }
      }
      ric(i, j) = v;
    }
  return 0.5 * (ric + ric.transpose());
}

// Eigenvalues of Ric relative to g (the Ricci endomorphism).
template <int D>
Eigen::Matrix<double, D, 1> ricci_eigenvalues(const Eigen::Matrix<double, D, D>& ric,
                                              const Eigen::Matrix<double, D, D>& g) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::Matrix<double, D, D>> es(ric, g);
  return es.eigenvalues();
}

// Spherical chart (theta, phi) about a pole; rejects points within 0.05 rad
// of either coordinate pole.
struct SphereChart {
  Vec3 pole = Vec3::UnitZ();
  Vec3 e1 = Vec3::UnitX();
  Vec3 e2 = Vec3::UnitY();

  static SphereChart with_pole(const Vec3& pole) {
    SphereChart c;
    c.pole = pole.normalized();
    std::tie(c.e1, c.e2) = sphere::tangent_frame(c.pole);
    return c;
  }
  Vec3 point(double theta, double phi) const {
    return std::sin(theta) * (std::cos(phi) * e1 + std::sin(phi) * e2) + std::cos(theta) * pole;
  }
  Eigen::Vector2d coords(const Vec3& u) const {
    const double theta = std::acos(std::clamp(u.dot(pole), -1.0, 1.0));
    if (std::sin(theta) < 0.05) throw ChartSingularity("SphereChart: point near a coordinate pole");
    return {theta, std::atan2(u.dot(e2), u.dot(e1))};
  }
};

// Metric of the cone in chart coordinates (r, theta, phi).
inline Eigen::Matrix3d cone_metric(const ConeSpace& cone, const SphereChart& chart,
                                   const Eigen::Vector3d& x, double jac_step = 1e-5) {
  const double r = x(0);
  const double s = cone.profile().f(r);
  const double h = cone.profile().h(r);
  auto image = [&](double th, double ph) { return cone.family().map(s, chart.point(th, ph)); };
  const Vec3 d_th = (image(x(1) + jac_step, x(2)) - image(x(1) - jac_step, x(2))) / (2 * jac_step);
  const Vec3 d_ph = (image(x(1), x(2) + jac_step) - image(x(1), x(2) - jac_step)) / (2 * jac_step);
  Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
  g(0, 0) = 1.0;
  const double w = r * r * h * h;
  g(1, 1) = w * d_th.dot(d_th);
  g(2, 2) = w * d_ph.dot(d_ph);
  g(1, 2) = g(2, 1) = w * d_th.dot(d_ph);
  return g;
}

struct RicciReport {
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  double max_abs_eigenvalue = 0.0;
  int samples = 0;
  int resampled = 0;
  std::vector<double> radius;
  std::vector<double> sample_min;
};

// Diagnostic only. Samples are log-uniform in r inside the mesh range, away
// from the tip; eigenvalues are scaled by r^2 so scales are comparable.
inline RicciReport ricci_spot_check(const ConeSpace& cone, int samples, double fd_step = 1e-3,
                                    std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  const double lo = std::log(cone.options().r_min) + 1.0;
  const double hi = std::log(cone.options().r_max) - 0.5;
  std::uniform_real_distribution<double> logr(lo, hi);
  std::normal_distribution<double> gauss;
  RicciReport rep;
  while (rep.samples < samples) {
    const double r = std::exp(logr(rng));
    const Vec3 u = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
    const SphereChart chart = SphereChart::with_pole(Vec3(gauss(rng), gauss(rng), gauss(rng)));
    Eigen::Vector2d tp;
    try {
      tp = chart.coords(u);
    } catch (const ChartSingularity&) {
      ++rep.resampled;
      continue;
    }
    // Step in r proportional to r keeps the relative resolution fixed.
    const Eigen::Vector3d x(1.0, tp(0), tp(1));
    auto metric = [&](const Eigen::Vector3d& y) {
      Eigen::Matrix3d g = cone_metric(cone, chart, Eigen::Vector3d(r * y(0), y(1), y(2)));
      g(0, 0) *= r * r;
      return g;
    };
    const Eigen::Matrix3d ric = ricci_tensor<3>(metric, x, fd_step);
    const Eigen::Vector3d ev = ricci_eigenvalues<3>(ric, metric(x)) * r * r;
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, ev.minCoeff());
    rep.max_abs_eigenvalue = std::max(rep.max_abs_eigenvalue, ev.cwiseAbs().maxCoeff());
    rep.radius.push_back(r);
    rep.sample_min.push_back(ev.minCoeff());
    ++rep.samples;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Angle drift under a C^{0,beta} metric

// g_ij = (1 + c |x|^beta) delta_ij on the unit ball of R^3. The Holder
// seminorm of c|x|^beta is c, and g(0) = identity.
struct HolderTestMetric {
  double beta = 0.5;
  double c = 1.0;

  double lambda(double rho) const { return 1.0 + c * std::pow(rho, beta); }
  // Sampled componentwise C^{0,beta} norm of g and of g^{-1}.
  double sampled_norm(int samples = 20000, std::uint64_t seed = 3) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto point = [&] {
      const Vec3 d = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
      return Vec3(d * std::cbrt(unit(rng)));
    };
    double semi = 0.0, semi_inv = 0.0;
    for (int k = 0; k < samples; ++k) {
      const Vec3 a = point(), b = point();
      const double dist = std::pow((a - b).norm(), beta);
      if (dist <= 0.0) continue;
      const double la = lambda(a.norm()), lb = lambda(b.norm());
      semi = std::max(semi, std::abs(la - lb) / dist);
      semi_inv = std::max(semi_inv, std::abs(1.0 / la - 1.0 / lb) / dist);
    }
    return std::max(lambda(1.0) + semi, 1.0 + semi_inv);
  }
};

// Euclidean radius at g-arclength t along a ray from 0: RK4 on
// d rho/dt = lambda(rho)^{-1/2}, over the graded grid t (k/n)^3 since the
// right-hand side is only Holder continuous at 0.
inline double holder_radial(const HolderTestMetric& m, double t, int steps = 4000) {
  double rho = 0.0;
  auto rhs = [&](double r) { return 1.0 / std::sqrt(m.lambda(std::max(r, 0.0))); };
  for (int k = 0; k < steps; ++k) {
    const double a = static_cast<double>(k) / steps, b = static_cast<double>(k + 1) / steps;
    const double dt = t * (b * b * b - a * a * a);
    const double k1 = rhs(rho), k2 = rhs(rho + 0.5 * dt * k1), k3 = rhs(rho + 0.5 * dt * k2),
                 k4 = rhs(rho + dt * k3);
    rho += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
  }
  if (rho > 0.5) throw ShootingDivergence("holder_radial: geodesic leaves B_1/2");
  return rho;
}

// g-distance between rho(cos(a/2), +-sin(a/2)) in the plane through the two
// rays (totally geodesic by reflection symmetry). The minimizer is symmetric
// about the bisector and crosses it orthogonally: shoot from the upper point,
// solve for the launch angle at which the x-velocity vanishes on the
// bisector, and double the arclength.
inline double holder_pair_distance(const HolderTestMetric& m, double rho, double a,
                                   int steps = 2000) {
  if (a <= 0.0) return 0.0;
  struct State {
    Eigen::Vector2d x, v;
  };
  // Geodesic equation for g = e^{2 sigma} delta: x'' = -2 (grad sigma . x') x' + |x'|^2 grad sigma.
  auto grad_sigma = [&](const Eigen::Vector2d& x) -> Eigen::Vector2d {
    const double r = x.norm();
    if (r <= 0.0 || m.c == 0.0) return Eigen::Vector2d::Zero();
    const double dl = m.c * m.beta * std::pow(r, m.beta - 1.0);
    return 0.5 * dl / m.lambda(r) * x / r;
  };
  auto accel = [&](const State& s) {
    const Eigen::Vector2d gs = grad_sigma(s.x);
    return Eigen::Vector2d(-2.0 * gs.dot(s.v) * s.v + s.v.squaredNorm() * gs);
  };
  auto rk4 = [&](const State& s, double dt) {
    auto f = [&](const State& q) { return State{q.v, accel(q)}; };
    auto add = [](const State& p, const State& d, double h) { return State{p.x + h * d.x, p.v + h * d.v}; };
    const State k1 = f(s), k2 = f(add(s, k1, 0.5 * dt)), k3 = f(add(s, k2, 0.5 * dt)), k4 = f(add(s, k3, dt));
    return State{s.x + dt / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), s.v + dt / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v)};
  };
  const Eigen::Vector2d start(rho * std::cos(0.5 * a), rho * std::sin(0.5 * a));
  const double scale = rho * std::sin(0.5 * a);  // Euclidean distance to the bisector
  // Returns (x-velocity at the crossing, arclength to it).
  auto shoot = [&](double psi) {
    State s{start, Eigen::Vector2d(std::cos(psi), std::sin(psi)) / std::sqrt(m.lambda(rho))};
    const double dt = scale / steps;
    double len = 0.0;
    for (int k = 0; k < 10000000; ++k) {
      const State next = rk4(s, dt);
      if (next.x.norm() > 0.5) throw ShootingDivergence("holder_pair_distance: left B_1/2");
      if (next.x(1) <= 0.0) {
        // Secant on the step length to land on the bisector.
        double h0 = 0.0, y0 = s.x(1), h1 = dt, y1 = next.x(1);
        for (int it = 0; it < 60 && std::abs(y1) > 1e-16 * scale; ++it) {
          const double h2 = h1 - y1 * (h1 - h0) / (y1 - y0);
          h0 = h1;
          y0 = y1;
          h1 = h2;
          y1 = rk4(s, h1).x(1);
        }
        const State end = rk4(s, h1);
        return std::pair<double, double>{end.v(0) * std::sqrt(m.lambda(end.x.norm())), len + h1};
      }
      s = next;
      len += dt;
    }
    throw ShootingDivergence("holder_pair_distance: no bisector crossing");
  };
  // The Euclidean launch direction points straight down: psi = -pi/2.
  double p0 = -0.5 * std::numbers::pi, p1 = p0 + 1e-3;
  double f0 = shoot(p0).first, f1 = shoot(p1).first;
  for (int it = 0; it < 50 && std::abs(f1) > 1e-15; ++it) {
    const double p2 = p1 - f1 * (p1 - p0) / (f1 - f0);
    p0 = p1;
    f0 = f1;
    p1 = p2;
    f1 = shoot(p1).first;
  }
  if (std::abs(f1) > 1e-9) throw ShootingDivergence("holder_pair_distance: shooting did not converge");
  return 2.0 * shoot(p1).second;
}

struct HolderDrift {
  std::vector<double> t;
  std::vector<double> angle;   // comparison angle at t
  std::vector<double> drift;   // |angle(t) - angle(t/2)|, one per t except the last
  double exponent = 0.0;       // log-log slope of drift against t
  double constant = 0.0;
  double sup_constant = 0.0;   // max drift / t^exponent
  double cauchy_ratio = 0.0;   // max |angle(t_i) - angle(t_j)| / (C sum t_k^exponent)
};

// Angles of geodesics from 0 in directions y, z on the dyadic grid
// t_0, t_0/2, ..., and the fitted power law drift = C t^exponent.
inline HolderDrift holder_angle_drift(const HolderTestMetric& m, const Vec3& y, const Vec3& z,
                                      double t0 = 1.0 / 256, int count = 16, int steps = 4000) {
  if (count < 3) throw ValidationError("holder_angle_drift: need at least three scales");
  const double a = sphere::distance(y.normalized(), z.normalized());
  HolderDrift out;
  for (int k = 0; k < count; ++k) {
    const double t = std::ldexp(t0, -k);
    const double rho = holder_radial(m, t, steps);
    const double d = holder_pair_distance(m, rho, a, steps / 2);
    out.t.push_back(t);
    out.angle.push_back(angle(t, t, d, 1e-6));
  }
  for (int k = 0; k + 1 < count; ++k) out.drift.push_back(std::abs(out.angle[static_cast<std::size_t>(k)] - out.angle[static_cast<std::size_t>(k) + 1]));
  // Least squares on log drift = log C + e log t, skipping exact zeros.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t k = 0; k < out.drift.size(); ++k) {
    if (!(out.drift[k] > 0.0)) continue;
    const double lx = std::log(out.t[k]), ly = std::log(out.drift[k]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    ++n;
  }
  if (n >= 2) {
    out.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    out.constant = std::exp((sy - out.exponent * sx) / n);
  }
  // Cauchy bound: |angle_i - angle_j| <= C t0^e sum_{k=i}^{j-1} 2^{-e k}.
  for (std::size_t k = 0; k < out.drift.size(); ++k)
    out.sup_constant = std::max(out.sup_constant, out.drift[k] / std::pow(out.t[k], out.exponent));
  double worst = 0.0;
  if (out.sup_constant > 0.0)
    for (int i = 0; i < count; ++i)
      for (int j = i + 1; j < count; ++j) {
        double bound = 0.0;
        for (int k = i; k < j; ++k) bound += out.sup_constant * std::pow(std::ldexp(t0, -k), out.exponent);
        worst = std::max(worst, std::abs(out.angle[static_cast<std::size_t>(i)] - out.angle[static_cast<std::size_t>(j)]) / bound);
      }
  out.cauchy_ratio = worst;
  return out;
}

}  // namespace rlab
