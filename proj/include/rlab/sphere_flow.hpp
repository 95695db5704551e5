#pragma once

// Volume-preserving diffeomorphisms of the round unit sphere S^2 generated by
// truncated rotation fields, the families they assemble into, and the
// covering schedule that realizes target distances between net points.

#include "rlab/errors.hpp"
#include "rlab/metric_core.hpp"
#include "rlab/smoothstep.hpp"
#include "rlab/sphere.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

namespace rlab {

// The great circle C (plane normal `axis`) used by one construction step.
struct GreatCircleFrame {
  Vec3 axis = Vec3::UnitZ();
  Vec3 anchor = Vec3::UnitZ();  // the point that must stay fixed
  double clearance = 0.0;       // d_g(anchor, C)

  double distance_to_circle(const Vec3& z) const {
    const double s = std::abs(axis.dot(z)) / z.norm();
    return std::asin(std::min(1.0, s));
  }
};

// K_bar = b K with K the rotation field about `axis` and b = chi(d(z, C)),
// chi = 1 on [0, eps], 0 beyond 2 eps. With `truncated == false`, b == 1.
struct TruncatedField {
  GreatCircleFrame frame;
  double eps = 0.05;
  double amplitude = 1.0;
  bool truncated = true;

  double cutoff(double dist) const {
    if (!truncated) return 1.0;
    return 1.0 - smoothstep((dist - eps) / eps);
  }
  double cutoff_slope(double dist) const {
    if (!truncated) return 0.0;
    return -smoothstep_derivative((dist - eps) / eps) / eps;
  }
  double bump(const Vec3& z) const { return cutoff(frame.distance_to_circle(z)); }

  // Defined on all of R^3 (b depends on the direction of z only), so ambient
  // finite differences are well posed.
  Vec3 operator()(const Vec3& z) const { return amplitude * bump(z) * frame.axis.cross(z); }

  // Exact time-`t` flow. b is invariant under the rotations K generates, so
  // every orbit is a circle traversed at constant angular speed amplitude*b.
  Vec3 rotate(const Vec3& z, double t) const {
    return sphere::rotate(frame.axis, amplitude * bump(z) * t, z);
  }
};

inline TruncatedField killing_field(const Vec3& axis, double amplitude = 1.0) {
  TruncatedField f;
  f.frame.axis = axis.normalized();
  f.frame.anchor = f.frame.axis;
  f.frame.clearance = std::numbers::pi / 2;
  f.amplitude = amplitude;
  f.truncated = false;
  return f;
}

// Field whose circle passes through y at distance exactly 4 eps from x.
// Such a circle exists iff 4 eps <= d(x, y) <= pi - 4 eps.
inline TruncatedField build_field(const Vec3& x_in, const Vec3& y_in, double eps) {
  if (!(eps > 0.0) || eps >= std::numbers::pi / 16)
    throw ValidationError("build_field: eps must lie in (0, pi/16)");
  const Vec3 x = x_in.normalized();
  const Vec3 y = y_in.normalized();
  const Vec3 x_perp = x - x.dot(y) * y;
  const double sin_d = x_perp.norm();
  const double sin_c = std::sin(4.0 * eps);
  const double d = sphere::distance(x, y);
  if (d < 4.0 * eps || d > std::numbers::pi - 4.0 * eps || sin_d < sin_c)
    throw ClearanceInfeasible("no great circle through y at distance 4 eps from x (d = " +
                              std::to_string(d) + ", 4 eps = " + std::to_string(4 * eps) + ")");
  const Vec3 u = x_perp / sin_d;
  const Vec3 w = y.cross(u);
  const double alpha = sin_c / sin_d;
  const double beta = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
  TruncatedField f;
  f.frame.axis = (alpha * u + beta * w).normalized();
  f.frame.anchor = x;
  f.frame.clearance = f.frame.distance_to_circle(x);
  f.eps = eps;
  return f;
}

struct TargetRotation {
  double angle = 0.0;     // flow time (amplitude 1) moving y along C
  double attained = 0.0;  // d_g(x, rotated y)
};

// Rotation along C bringing y as close as possible to distance theta from x.
inline TargetRotation target_rotation(const TruncatedField& f, const Vec3& x, const Vec3& y,
                                      double theta) {
  const Vec3& a = f.frame.axis;
  const double p = x.dot(y);
  const double q = x.dot(a.cross(y));
  const double rho = std::hypot(p, q);
  const double phase = std::atan2(q, p);
  const double c = std::clamp(std::cos(theta) / rho, -1.0, 1.0);
  const double k = std::acos(c);
  auto wrap = [](double v) { return std::remainder(v, 2.0 * std::numbers::pi); };
  const double a1 = wrap(phase + k);
  const double a2 = wrap(phase - k);
  TargetRotation out;
  const double rotation = std::abs(a1) <= std::abs(a2) ? a1 : a2;
  out.angle = rotation / (f.amplitude * f.bump(y));
  out.attained = sphere::distance(x, f.rotate(y, out.angle));
  return out;
}

// Max |div K_bar| by central differences in a randomly rotated orthonormal
// frame. Half of the samples are drawn from the cutoff band around C.
inline double divergence_check(const TruncatedField& f, int samples, double fd_step,
                               std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 a = f.frame.axis;
  const auto [c1, c2] = sphere::tangent_frame(a);
  double worst = 0.0;
  for (int k = 0; k < samples; ++k) {
    Vec3 z;
    if (k % 2 == 0) {
      z = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
    } else {
      const double phi = 2.0 * std::numbers::pi * unit(rng);
      const double off = (2.0 * unit(rng) - 1.0) * 2.2 * f.eps;
      z = (std::cos(off) * (std::cos(phi) * c1 + std::sin(phi) * c2) + std::sin(off) * a)
              .normalized();
    }
    auto [e1, e2] = sphere::tangent_frame(z);
    const double spin = 2.0 * std::numbers::pi * unit(rng);
    const Vec3 t1 = std::cos(spin) * e1 + std::sin(spin) * e2;
    const Vec3 t2 = z.cross(t1);
    double div = 0.0;
    // Fourth-order central stencil along the geodesics through z.
    for (const Vec3& e : {t1, t2}) {
      auto v = [&](double h) { return f(sphere::exp_map(z, h * e)).dot(e); };
      div += (8.0 * (v(fd_step) - v(-fd_step)) - (v(2.0 * fd_step) - v(-2.0 * fd_step))) / (12.0 * fd_step);
    }
    worst = std::max(worst, std::abs(div));
  }
  return worst;
}

// Fixed-step RK4 integration of dz/dt = K_bar(z), renormalized each step.
inline Vec3 flow(const TruncatedField& f, const Vec3& z0, double s, double step) {
  if (!(step > 0.0)) throw ValidationError("flow: step must be positive");
  if (s == 0.0) return z0;
  const int n = static_cast<int>(std::ceil(std::abs(s) / step));
  const double h = s / n;
  Vec3 z = z0;
  for (int i = 0; i < n; ++i) {
    const Vec3 k1 = f(z);
    const Vec3 k2 = f(z + 0.5 * h * k1);
    const Vec3 k3 = f(z + 0.5 * h * k2);
    const Vec3 k4 = f(z + h * k3);
    z = (z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).normalized();
  }
  return z;
}

// ---------------------------------------------------------------------------
// Segment profile: identity on the outer quarters, smooth ramps of width w,
// plateau at 1 in between.

struct RampProfile {
  double width = 0.05;

  double value(double v) const {
    if (v <= 0.25 || v >= 0.75) return 0.0;
    if (v < 0.25 + width) return smoothstep((v - 0.25) / width);
    if (v > 0.75 - width) return smoothstep((0.75 - v) / width);
    return 1.0;
  }
  double max_slope() const { return kSmoothstepMaxSlope / width; }
  double max_curvature() const { return smoothstep_max_curvature() / (width * width); }
  double plateau_begin() const { return 0.25 + width; }
  double plateau_end() const { return 0.75 - width; }
};

struct FlowSegment {
  TruncatedField field;
  double s_begin = 0.0;
  double s_end = 1.0;
  double peak_angle = 0.0;

  double local(double s) const { return (s - s_begin) / (s_end - s_begin); }
  double midpoint() const { return 0.5 * (s_begin + s_end); }
};

// phi_s on S^2, piecewise over non-overlapping segments sorted by s_begin.
// Outside every segment, and for s <= -freeze when a freeze is set, phi_s = id.
class DiffeoFamily {
 public:
  DiffeoFamily() = default;
  explicit DiffeoFamily(std::vector<FlowSegment> segments, RampProfile profile = {},
                        std::optional<double> freeze = std::nullopt)
      : segments_(std::move(segments)), profile_(profile), freeze_(freeze) {
    std::sort(segments_.begin(), segments_.end(),
              [](const FlowSegment& a, const FlowSegment& b) { return a.s_begin < b.s_begin; });
    for (std::size_t i = 1; i < segments_.size(); ++i)
      if (segments_[i].s_begin < segments_[i - 1].s_end - 1e-12)
        throw ValidationError("DiffeoFamily: overlapping segments");
    if (freeze_ && *freeze_ < 0.0) throw ValidationError("DiffeoFamily: freeze must be >= 0");
  }

  static DiffeoFamily identity() { return DiffeoFamily{}; }

  DiffeoFamily with_freeze(double alpha) const {
    return DiffeoFamily(segments_, profile_, alpha);
  }

  const std::vector<FlowSegment>& segments() const { return segments_; }
  const RampProfile& profile() const { return profile_; }
  std::optional<double> freeze() const { return freeze_; }
  bool is_identity() const { return segments_.empty(); }

  const FlowSegment* segment_at(double s) const {
    if (segments_.empty()) return nullptr;
    if (freeze_ && s <= -*freeze_) return nullptr;
    auto it = std::upper_bound(segments_.begin(), segments_.end(), s,
                               [](double v, const FlowSegment& seg) { return v < seg.s_begin; });
    if (it == segments_.begin()) return nullptr;
    --it;
    return s <= it->s_end ? &*it : nullptr;
  }

  // Flow time A(s) applied to the active segment's field.
  double rotation_angle(double s) const {
    const FlowSegment* seg = segment_at(s);
    return seg ? seg->peak_angle * profile_.value(seg->local(s)) : 0.0;
  }

  Vec3 map(double s, const Vec3& z) const {
    const FlowSegment* seg = segment_at(s);
    if (!seg) return z;
    const double t = seg->peak_angle * profile_.value(seg->local(s));
    return t == 0.0 ? z : seg->field.rotate(z, t);
  }

  Vec3 inverse(double s, const Vec3& w) const {
    const FlowSegment* seg = segment_at(s);
    if (!seg) return w;
    const double t = seg->peak_angle * profile_.value(seg->local(s));
    return t == 0.0 ? w : seg->field.rotate(w, -t);
  }

  double parameter_length() const {
    return segments_.empty() ? 0.0 : segments_.back().s_end - segments_.front().s_begin;
  }

 private:
  std::vector<FlowSegment> segments_;
  RampProfile profile_;
  std::optional<double> freeze_;
};

// d_{g_s}(y, z) with g_s = phi_s^* g; phi_s is an isometry onto the round sphere.
inline double pullback_distance(const DiffeoFamily& family, double s, const Vec3& y,
                                const Vec3& z) {
  return sphere::distance(family.map(s, y), family.map(s, z));
}

// ---------------------------------------------------------------------------
// Tensor diagnostics

namespace detail {

template <class Map>
Eigen::Matrix<double, 3, 2> jacobian(Map&& m, const Vec3& z, const Vec3& e1, const Vec3& e2,
                                     double h) {
  Eigen::Matrix<double, 3, 2> J;
  J.col(0) = (m(sphere::exp_map(z, h * e1)) - m(sphere::exp_map(z, -h * e1))) / (2.0 * h);
  J.col(1) = (m(sphere::exp_map(z, h * e2)) - m(sphere::exp_map(z, -h * e2))) / (2.0 * h);
  return J;
}

// Symmetrized covariant derivative of f in an orthonormal frame at z.
inline Eigen::Matrix2d lie_metric(const TruncatedField& f, const Vec3& z, const Vec3& e1,
                                  const Vec3& e2, double h) {
  const Eigen::Matrix<double, 3, 2> DV = jacobian(f, z, e1, e2, h);
  Eigen::Matrix2d S;
  const Vec3 e[2] = {e1, e2};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) S(i, j) = e[i].dot(DV.col(j)) + e[j].dot(DV.col(i));
  return S;
}

}  // namespace detail

// Determinant of D(map) at z between orthonormal frames at z and map(z).
template <class Map>
double jacobian_determinant(Map&& m, const Vec3& z, double h = 1e-5) {
  const auto [e1, e2] = sphere::tangent_frame(z);
  const Eigen::Matrix<double, 3, 2> J = detail::jacobian(m, z, e1, e2, h);
  const Vec3 w = m(z);
  const auto [f1, f2] = sphere::tangent_frame(w);
  Eigen::Matrix2d M;
  M << f1.dot(J.col(0)), f1.dot(J.col(1)), f2.dot(J.col(0)), f2.dot(J.col(1));
  return M.determinant();
}

// Ratio of image area to original area of a geodesic triangle.
template <class Map>
double cell_area_ratio(Map&& m, const Vec3& a, const Vec3& b, const Vec3& c, int edge_samples) {
  // The image region is bounded by the image of the cell boundary, so its
  // area is a signed fan over the densely sampled pushed-forward boundary.
  const Vec3 pole = m(Vec3((a + b + c).normalized()));
  const std::array<Vec3, 3> corner{a, b, c};
  double after = 0.0;
  Vec3 prev = m(a);
  for (int e = 0; e < 3; ++e) {
    const Vec3& p = corner[static_cast<std::size_t>(e)];
    const Vec3& q = corner[static_cast<std::size_t>((e + 1) % 3)];
    for (int k = 1; k <= edge_samples; ++k) {
      const double t = static_cast<double>(k) / edge_samples;
      const Vec3 next = m(Vec3(((1.0 - t) * p + t * q).normalized()));
      after += sphere::signed_triangle_area(pole, prev, next);
      prev = next;
    }
  }
  const double before = sphere::signed_triangle_area(a, b, c);
  return after / before;
}

// Sup norms over S^2 of |L_K g|, |L_K L_K g| and |nabla L_K g| for a field
// with amplitude 1. All three depend only on the distance to C, so a
// meridian crossing the circle is probed.
struct FieldBounds {
  double lie = 0.0;
  double lie2 = 0.0;
  double grad_lie = 0.0;
};

inline FieldBounds measure_field_bounds(const TruncatedField& f_in, int probes = 240,
                                        double h = 1e-6) {
  TruncatedField f = f_in;
  f.amplitude = 1.0;
  const Vec3 a = f.frame.axis;
  const Vec3 c0 = sphere::tangent_frame(a).first;
  FieldBounds out;
  const double span = f.truncated ? 2.2 * f.eps : std::numbers::pi / 2 * 0.9;
  for (int k = 0; k <= probes; ++k) {
    const double off = span * (2.0 * k / probes - 1.0);
    const Vec3 z = (std::cos(off) * c0 + std::sin(off) * a).normalized();
    auto [e1, e2] = sphere::tangent_frame(z);
    out.lie = std::max(out.lie, detail::lie_metric(f, z, e1, e2, h).norm());

    const double tau = 1e-3;
    auto gram = [&](double t) {
      const auto J = detail::jacobian([&](const Vec3& p) { return f.rotate(p, t); }, z, e1, e2,
                                      1e-5);
      return Eigen::Matrix2d(J.transpose() * J);
    };
    const Eigen::Matrix2d second = (gram(tau) - 2.0 * gram(0.0) + gram(-tau)) / (tau * tau);
    out.lie2 = std::max(out.lie2, second.norm());

    const double delta = 1e-4;
    double grad2 = 0.0;
    const Vec3 e[2] = {e1, e2};
    for (int k2 = 0; k2 < 2; ++k2) {
      const Vec3& ek = e[k2];
      const Vec3& eo = e[1 - k2];
      auto moved = [&](double sgn) {
        const double d = sgn * delta;
        const Vec3 zp = std::cos(d) * z + std::sin(d) * ek;
        const Vec3 ekp = -std::sin(d) * z + std::cos(d) * ek;
        return k2 == 0 ? detail::lie_metric(f, zp, ekp, eo, h)
                       : detail::lie_metric(f, zp, eo, ekp, h);
      };
      grad2 += ((moved(1.0) - moved(-1.0)) / (2.0 * delta)).squaredNorm();
    }
    out.grad_lie = std::max(out.grad_lie, std::sqrt(grad2));
  }
  return out;
}

// Central differences in s of the metric tensor g_s, read at the image point
// w = phi_s(u) through the isometry: returns |d_s g|, |d_s d_s g| and
// |nabla d_s g| measured w.r.t. g_s.
struct TensorDerivatives {
  double first = 0.0;
  double second = 0.0;
  double gradient = 0.0;
};

inline TensorDerivatives tensor_derivatives(const DiffeoFamily& fam, double s, const Vec3& w,
                                            double ds, double h = 1e-5) {
  auto gram_at = [&](const Vec3& p, const Vec3& e1, const Vec3& e2, double sigma) {
    auto m = [&](const Vec3& q) { return fam.map(sigma, fam.inverse(s, q)); };
    const auto J = detail::jacobian(m, p, e1, e2, h);
    return Eigen::Matrix2d(J.transpose() * J);
  };
  auto [e1, e2] = sphere::tangent_frame(w);
  TensorDerivatives out;
  const Eigen::Matrix2d gp = gram_at(w, e1, e2, s + ds);
  const Eigen::Matrix2d g0 = gram_at(w, e1, e2, s);
  const Eigen::Matrix2d gm = gram_at(w, e1, e2, s - ds);
  out.first = ((gp - gm) / (2.0 * ds)).norm();
  out.second = ((gp - 2.0 * g0 + gm) / (ds * ds)).norm();
  const double delta = 1e-3;
  const Vec3 e[2] = {e1, e2};
  double grad2 = 0.0;
  for (int k = 0; k < 2; ++k) {
    auto first_at = [&](double sgn) {
      const double d = sgn * delta;
      const Vec3 p = std::cos(d) * w + std::sin(d) * e[k];
      const Vec3 ek = -std::sin(d) * w + std::cos(d) * e[k];
      const Vec3& eo = e[1 - k];
      const Vec3 f1 = k == 0 ? ek : eo;
      const Vec3 f2 = k == 0 ? eo : ek;
      return Eigen::Matrix2d((gram_at(p, f1, f2, s + ds) - gram_at(p, f1, f2, s - ds)) /
                             (2.0 * ds));
    };
    grad2 += ((first_at(1.0) - first_at(-1.0)) / (2.0 * delta)).squaredNorm();
  }
  out.gradient = std::sqrt(grad2);
  return out;
}

// Pullback tensor g_s at u in the orthonormal round frame (e1, e2) at u.
inline Eigen::Matrix2d pullback_tensor(const DiffeoFamily& fam, double s, const Vec3& u,
                                       double h = 1e-6) {
  auto [e1, e2] = sphere::tangent_frame(u);
  const auto J = detail::jacobian([&](const Vec3& q) { return fam.map(s, q); }, u, e1, e2, h);
  return J.transpose() * J;
}

// Graph on sphere points whose edge lengths integrate the meshed pullback
// tensor at edge midpoints. Independent of pullback_distance's isometry route.
inline WeightedGraph meshed_pullback_graph(const DiffeoFamily& fam, double s,
                                           const std::vector<Vec3>& pts, int k, int quadrature = 8) {
  // Edge length is the g_s-length of the great-circle arc, midpoint rule.
  auto tensor_length = [&](const Vec3& a, const Vec3& b) {
    const double len = sphere::distance(a, b);
    const Vec3 axis = a.cross(b).normalized();
    double total = 0.0;
    for (int q = 0; q < quadrature; ++q) {
      const double t = (q + 0.5) / quadrature;
      const Vec3 p = sphere::rotate(axis, t * len, a);
      auto [e1, e2] = sphere::tangent_frame(p);
      const Vec3 dir = axis.cross(p);
      const Eigen::Vector2d v(dir.dot(e1), dir.dot(e2));
      auto J = detail::jacobian([&](const Vec3& x) { return fam.map(s, x); }, p, e1, e2, 1e-6);
      total += std::sqrt(v.dot((J.transpose() * J) * v));
    }
    return total * len / quadrature;
  };
  WeightedGraph g = knn_graph(pts, k, [](const Vec3& a, const Vec3& b) {
    return sphere::distance(a, b);
  });
  for (int i = 0; i < g.size(); ++i)
    for (auto& e : g.adjacency[static_cast<std::size_t>(i)])
      e.length = tensor_length(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(e.to)]);
  return g;
}

// ---------------------------------------------------------------------------
// Covering schedule

struct ScheduleEntry {
  int level = 0;
  int i = 0;
  int j = 0;
  double theta = 0.0;
  double s_begin = 0.0;
  double s_end = 0.0;
  long long unit_index = 0;  // segment number; identity windows sit at unit boundaries
  double peak_angle = 0.0;

  double s_mid() const { return 0.5 * (s_begin + s_end); }
};

struct ScheduleOptions {
  int levels = 1;
  int theta_grid = 1;
  int cloud_points = 6000;  // sphere sample the nets are drawn from
  double eps_cap = std::numbers::pi / 17;
  bool reparametrize = true;
  double ramp_width = 0.05;
  double s_origin = 0.0;
  long long max_entries = 20'000'000;
  double max_parameter_length = 1e15;
};

struct Schedule {
  DiffeoFamily family;
  std::vector<ScheduleEntry> entries;
  std::vector<std::vector<Vec3>> nets;  // nets[N-1] = level-N net
  std::vector<double> level_eps;
  std::vector<FieldBounds> level_bounds;
  long long skipped_pairs = 0;  // pairs closer than 4 eps or farther than pi - 4 eps

  const Vec3& point(int level, int idx) const {
    return nets[static_cast<std::size_t>(level - 1)][static_cast<std::size_t>(idx)];
  }
};

inline double schedule_level_eps(int level, double eps_cap) {
  return std::min(std::ldexp(1.0, -level), eps_cap);
}

// theta_k = (k + 1/2) pi / grid.
inline std::vector<double> theta_targets(int grid) {
  std::vector<double> t;
  for (int k = 0; k < grid; ++k) t.push_back((k + 0.5) * std::numbers::pi / grid);
  return t;
}

// Segment length making sup|d_s g| <= 1, sup|d_s d_s g| <= 1 and
// sup|nabla d_s g| <= 1 for a segment of peak flow time `peak`.
inline double reparametrized_length(double peak, const FieldBounds& b, const RampProfile& p) {
  const double a = std::abs(peak);
  const double l1 = a * p.max_slope() * b.lie;
  const double l2 = std::sqrt(a * p.max_curvature() * b.lie +
                              a * a * p.max_slope() * p.max_slope() * b.lie2);
  const double l3 = a * p.max_slope() * b.grad_lie;
  return std::max({1.0, l1, l2, l3});
}

inline Schedule build_schedule(const ScheduleOptions& opt) {
  if (opt.levels < 1) throw ValidationError("build_schedule: levels must be >= 1");
  if (opt.theta_grid < 1) throw ValidationError("build_schedule: theta_grid must be >= 1");
  Schedule out;
  const RampProfile profile{opt.ramp_width};
  const auto cloud = sphere::fibonacci_points(opt.cloud_points);
  auto cloud_dist = [&](int a, int b) {
    return sphere::distance(cloud[static_cast<std::size_t>(a)], cloud[static_cast<std::size_t>(b)]);
  };
  const auto thetas = theta_targets(opt.theta_grid);
  std::vector<FlowSegment> segments;
  double cursor = opt.s_origin;
  long long unit = 0;
  for (int level = 1; level <= opt.levels; ++level) {
    const double eps = schedule_level_eps(level, opt.eps_cap);
    const Net net = farthest_point_net(opt.cloud_points, cloud_dist, opt.cloud_points, 0,
                                       std::ldexp(1.0, -level));
    std::vector<Vec3> pts;
    for (int id : net.ids) pts.push_back(cloud[static_cast<std::size_t>(id)]);
    out.nets.push_back(pts);
    out.level_eps.push_back(eps);
    TruncatedField probe = build_field(Vec3::UnitZ(), Vec3::UnitX(), eps);
    const FieldBounds bounds = measure_field_bounds(probe);
    out.level_bounds.push_back(bounds);
    const int n = static_cast<int>(pts.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double d = sphere::distance(pts[i], pts[j]);
        if (d < 4.0 * eps || d > std::numbers::pi - 4.0 * eps ||
            std::sin(d) < std::sin(4.0 * eps)) {
          ++out.skipped_pairs;
          continue;
        }
        const TruncatedField field = build_field(pts[i], pts[j], eps);
        for (double theta : thetas) {
          const TargetRotation rot = target_rotation(field, pts[i], pts[j], theta);
          const double len =
              opt.reparametrize ? reparametrized_length(rot.angle, bounds, profile) : 1.0;
          if (static_cast<long long>(out.entries.size()) >= opt.max_entries)
            throw ScheduleOverflow("more than " + std::to_string(opt.max_entries) + " entries");
          if (cursor + len - opt.s_origin > opt.max_parameter_length)
            throw ScheduleOverflow("total parameter length exceeds cap");
          segments.push_back({field, cursor, cursor + len, rot.angle});
          out.entries.push_back({level, i, j, theta, cursor, cursor + len, unit, rot.angle});
          cursor += len;
          ++unit;
        }
      }
  }
  out.family = DiffeoFamily(std::move(segments), profile);
  return out;
}

// Unit-length segments over s in [-(m+1), -m] for m = first_level, ...,
// each moving z relative to y toward the next target in `targets` (cyclic).
// This is the compact family that fits inside a cone mesh through s = f(r).
inline Schedule pair_schedule(const Vec3& y, const Vec3& z, double eps,
                              const std::vector<double>& targets, int first_level, int count,
                              double ramp_width = 0.05) {
  if (targets.empty() || count < 1) throw ValidationError("pair_schedule: empty schedule");
  Schedule out;
  const TruncatedField field = build_field(y, z, eps);
  std::vector<FlowSegment> segs;
  for (int k = 0; k < count; ++k) {
    const int m = first_level + k;
    const double theta = targets[static_cast<std::size_t>(k) % targets.size()];
    const TargetRotation rot = target_rotation(field, y, z, theta);
    const double b = -static_cast<double>(m) - 1.0;
    segs.push_back({field, b, b + 1.0, rot.angle});
    out.entries.push_back({m, 0, 1, theta, b, b + 1.0, m, rot.angle});
  }
  out.nets.push_back({y.normalized(), z.normalized()});
  out.level_eps.push_back(eps);
  out.family = DiffeoFamily(std::move(segs), RampProfile{ramp_width});
  return out;
}

inline void write_schedule_csv(std::ostream& os, const Schedule& sch) {
  os << "level,i,j,theta,s_begin,s_end,unit_index,peak_angle\n";
  os.precision(17);
  for (const auto& e : sch.entries)
    os << e.level << ',' << e.i << ',' << e.j << ',' << e.theta << ',' << e.s_begin << ','
       << e.s_end << ',' << e.unit_index << ',' << e.peak_angle << '\n';
}

}  // namespace rlab
