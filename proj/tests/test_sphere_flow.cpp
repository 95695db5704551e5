#include "rlab/sphere_flow.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numbers>

using namespace rlab;
using Catch::Approx;

namespace {

const Vec3 kNorth = Vec3::UnitZ();
const Vec3 kEquator = Vec3::UnitX();

Vec3 point_at_circle_distance(const TruncatedField& f, double phase, double dist) {
  const auto [c1, c2] = sphere::tangent_frame(f.frame.axis);
  const Vec3 on = std::cos(phase) * c1 + std::sin(phase) * c2;
  return (std::cos(dist) * on + std::sin(dist) * f.frame.axis).normalized();
}

}  // namespace

TEST_CASE("smooth step derivative bounds", "[sphere_flow]") {
  double slope = 0, curv = 0;
  for (int k = 0; k <= 200000; ++k) {
    const double t = k / 200000.0;
    slope = std::max(slope, std::abs(smoothstep_derivative(t)));
    curv = std::max(curv, std::abs(smoothstep_second_derivative(t)));
  }
  CHECK(slope == Approx(kSmoothstepMaxSlope).epsilon(1e-9));
  CHECK(curv == Approx(smoothstep_max_curvature()).epsilon(1e-6));
  // derivative consistency
  for (double t : {0.1, 0.3, 0.5, 0.77}) {
    const double h = 1e-6;
    CHECK((smoothstep(t + h) - smoothstep(t - h)) / (2 * h) ==
          Approx(smoothstep_derivative(t)).epsilon(1e-6));
  }
}

TEST_CASE("build_field places the circle at clearance 4 eps", "[sphere_flow]") {
  const auto f = build_field(kNorth, kEquator, 0.05);
  CHECK(std::abs(f.frame.distance_to_circle(kNorth) - 0.2) < 1e-10);
  CHECK(std::abs(f.frame.axis.dot(kEquator)) < 1e-14);  // y on C
  CHECK(f.frame.axis.norm() == Approx(1.0));
  // The circle is the equator tilted by 0.2 toward the pole.
  CHECK(std::acos(std::abs(f.frame.axis.dot(kNorth))) == Approx(std::numbers::pi / 2 - 0.2));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int k = 0; k < 200; ++k) {
    const Vec3 x = Vec3(g(rng), g(rng), g(rng)).normalized();
    const Vec3 y = Vec3(g(rng), g(rng), g(rng)).normalized();
    const double d = sphere::distance(x, y);
    const double eps = 0.03;
    if (d < 4 * eps || d > std::numbers::pi - 4 * eps) {
      CHECK_THROWS_AS(build_field(x, y, eps), ClearanceInfeasible);
      continue;
    }
    const auto fx = build_field(x, y, eps);
    CHECK(std::abs(fx.frame.distance_to_circle(x) - 4 * eps) < 1e-10);
    CHECK(std::abs(fx.frame.axis.dot(y)) < 1e-12);
  }
  CHECK_THROWS_AS(build_field(kNorth, sphere::exp_map(kNorth, Vec3(0.1, 0, 0)), 0.05),
                  ClearanceInfeasible);
  CHECK_THROWS_AS(build_field(kNorth, kEquator, 0.25), ValidationError);
}

TEST_CASE("truncated field support and values", "[sphere_flow]") {
  auto f = build_field(kNorth, kEquator, 0.05);
  f.amplitude = 1.7;
  for (double phase : {0.0, 1.0, 2.5, 4.0}) {
    CHECK(f(point_at_circle_distance(f, phase, 0.1 + 1e-9)).norm() == 0.0);
    CHECK(f(point_at_circle_distance(f, phase, 0.4)).norm() == 0.0);
    const Vec3 on = point_at_circle_distance(f, phase, 0.0);
    const Vec3 v = f(on);
    CHECK(v.norm() == Approx(1.7));
    CHECK(std::abs(v.dot(f.frame.axis)) < 1e-14);  // tangent to C
    CHECK(std::abs(v.dot(on)) < 1e-14);
  }
  // The anchor and its eps-ball are fixed.
  CHECK(f(kNorth).norm() == 0.0);
  CHECK(f(sphere::exp_map(kNorth, Vec3(0.05, 0.0, 0.0))).norm() == 0.0);
}

TEST_CASE("divergence of rotation fields", "[sphere_flow]") {
  const auto killing = killing_field(Vec3(1, 2, 3).normalized(), 1.3);
  CHECK(divergence_check(killing, 500, 1e-4) <= 1e-8);

  auto zero = build_field(kNorth, kEquator, 0.05);
  zero.amplitude = 0.0;
  CHECK(divergence_check(zero, 500, 1e-4) == 0.0);

  // Fourth-order convergence of the finite-difference estimate.
  const auto f = build_field(kNorth, kEquator, 0.05);
  const double coarse = divergence_check(f, 500, 2e-3);
  const double fine = divergence_check(f, 500, 1e-3);
  const double c_fit = coarse / std::pow(2e-3, 4);
  INFO("fitted constant " << c_fit << ", coarse " << coarse << ", fine " << fine);
  CHECK(fine <= c_fit * std::pow(1e-3, 4) * 1.5);
  CHECK(fine < coarse / 8.0);
  CHECK(divergence_check(f, 500, 1e-4) <= 1e-6);
}

TEST_CASE("RK4 flow against the closed-form rotation", "[sphere_flow]") {
  auto f = build_field(kNorth, kEquator, 0.05);
  f.amplitude = 0.8;
  const Vec3 z = point_at_circle_distance(f, 0.7, 0.0);
  CHECK(flow(f, z, 0.0, 0.0025) == z);
  for (double s : {0.3, 1.0, 2.5}) {
    const Vec3 exact = sphere::rotate(f.frame.axis, 0.8 * s, z);
    CHECK((flow(f, z, s, 0.05 / 20) - exact).norm() < 1e-8);
  }
  const Vec3 outside = point_at_circle_distance(f, 1.1, 0.3);
  CHECK((flow(f, outside, 5.0, 0.0025) - outside).norm() < 1e-15);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.11, 0.11);
  for (int k = 0; k < 50; ++k) {
    const Vec3 p = point_at_circle_distance(f, 6.0 * k / 50, u(rng));
    CHECK((flow(f, p, 1.5, 0.0025) - f.rotate(p, 1.5)).norm() < 1e-7);
  }
  CHECK_THROWS_AS(flow(f, z, 1.0, 0.0), ValidationError);
}

TEST_CASE("field bounds match the closed form", "[sphere_flow]") {
  // |L_K g| = sqrt(2) |chi'(delta)| |K| with |K| = cos(delta) at distance delta from C.
  for (double eps : {0.05, 0.1}) {
    const auto f = build_field(kNorth, kEquator, eps);
    double expected = 0;
    for (int k = 0; k <= 20000; ++k) {
      const double d = 2.0 * eps * k / 20000;
      expected = std::max(expected, std::sqrt(2.0) * std::abs(f.cutoff_slope(d)) * std::cos(d));
    }
    const auto b = measure_field_bounds(f, 2000);
    CHECK(b.lie == Approx(expected).epsilon(2e-3));
    CHECK(b.lie2 > 0.0);
    CHECK(b.grad_lie > 0.0);
  }
  const auto kb = measure_field_bounds(killing_field(kNorth), 60);
  CHECK(kb.lie < 1e-8);
}

TEST_CASE("target rotation attains theta within 4 eps", "[sphere_flow]") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> th(0.0, std::numbers::pi);
  int tested = 0;
  while (tested < 300) {
    const Vec3 x = Vec3(g(rng), g(rng), g(rng)).normalized();
    const Vec3 y = Vec3(g(rng), g(rng), g(rng)).normalized();
    const double eps = 0.04;
    try {
      const auto f = build_field(x, y, eps);
      const double theta = th(rng);
      const auto rot = target_rotation(f, x, y, theta);
      CHECK(std::abs(rot.attained - theta) <= 4 * eps + 1e-12);
      if (theta > 4 * eps && theta < std::numbers::pi - 4 * eps)
        CHECK(rot.attained == Approx(theta).margin(1e-9));
      // x stays fixed, y is carried: distance realized by the flow map.
      CHECK((f.rotate(x, rot.angle) - x).norm() == 0.0);
      ++tested;
    } catch (const ClearanceInfeasible&) {
    }
  }
}

TEST_CASE("diffeo family identity windows and pullback distance", "[sphere_flow]") {
  const auto sch = pair_schedule(kNorth, kEquator, 0.05, {0.3, 2.8}, 1, 3);
  const auto& fam = sch.family;
  const Vec3 y = kNorth, z = kEquator;
  for (int m = -4; m <= 0; ++m)
    for (double off : {-0.25, -0.1, 0.0, 0.1, 0.25})
      CHECK(pullback_distance(fam, m + off, y, z) == Approx(sphere::distance(y, z)));
  CHECK(pullback_distance(fam, -2.5, y, y) == 0.0);
  for (const auto& e : sch.entries) {
    CHECK(std::abs(pullback_distance(fam, e.s_mid(), y, z) - e.theta) <= 4 * 0.05);
    CHECK(pullback_distance(fam, e.s_mid(), y, z) == Approx(e.theta).margin(1e-9));
  }
  // Freeze makes everything below -alpha the identity.
  const auto frozen = fam.with_freeze(2.0);
  CHECK(pullback_distance(frozen, -2.5, y, z) == Approx(std::numbers::pi / 2));
  CHECK(pullback_distance(frozen, -1.5, y, z) == Approx(0.3));

  // No mesh vertex moves inside an identity window.
  const auto mesh = sphere::icosphere(3);
  for (double s : {-3.0, -2.8, -2.2, -2.0, -1.77}) {
    double worst = 0;
    for (const auto& v : mesh.vertices) worst = std::max(worst, (fam.map(s, v) - v).norm());
    CHECK(worst == 0.0);
  }
}

TEST_CASE("flow maps preserve the volume form", "[sphere_flow]") {
  auto f = build_field(kNorth, kEquator, 0.1);
  const double t = 1.0;
  const auto mesh = sphere::icosphere(3);
  auto rk4 = [&](const Vec3& p) { return flow(f, p, t, f.eps / 20); };
  auto exact = [&](const Vec3& p) { return f.rotate(p, t); };
  double worst_jac = 0, worst_area = 0, total_before = 0, total_after = 0;
  for (const auto& face : mesh.faces) {
    const Vec3& a = mesh.vertices[face[0]];
    const Vec3& b = mesh.vertices[face[1]];
    const Vec3& c = mesh.vertices[face[2]];
    worst_jac = std::max(worst_jac, std::abs(jacobian_determinant(rk4, (a + b + c).normalized()) - 1.0));
    const double ratio = cell_area_ratio(exact, a, b, c, 1024);
    worst_area = std::max(worst_area, std::abs(ratio - 1.0));
    const double area = sphere::spherical_triangle_area(a, b, c);
    total_before += area;
    total_after += ratio * area;
  }
  INFO("jacobian " << worst_jac << " area " << worst_area);
  CHECK(worst_jac <= 1e-4);
  CHECK(worst_area <= 1e-4 * t);
  CHECK(std::abs(total_after / total_before - 1.0) <= 1e-5);
  CHECK(total_before == Approx(4 * std::numbers::pi));
  // RK4 and the closed form give the same image cells.
  for (std::size_t k = 0; k < mesh.faces.size(); k += 97) {
    const auto& face = mesh.faces[k];
    CHECK(cell_area_ratio(rk4, mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]], 128) ==
          Approx(cell_area_ratio(exact, mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]], 128))
              .epsilon(1e-7));
  }
}

TEST_CASE("pullback distance agrees with the meshed pullback tensor", "[sphere_flow]") {
  // Two independent routes to d_{g_s}: the isometry phi_s and Dijkstra over
  // edges measured with the pullback tensor itself.
  const auto sch = pair_schedule(kNorth, kEquator, 0.15, {2.0}, 0, 1);
  const double s = sch.entries[0].s_mid();
  auto pts = sphere::fibonacci_points(3000);
  pts.push_back(kNorth);
  pts.push_back(kEquator);
  const auto g = meshed_pullback_graph(sch.family, s, pts, 12);
  const auto tree = dijkstra(g, 3000);
  const double mesh = tree.dist[3001];
  const double exact = pullback_distance(sch.family, s, kNorth, kEquator);
  INFO("mesh " << mesh << " exact " << exact);
  CHECK(exact == Approx(2.0));
  CHECK(std::abs(mesh - exact) / exact < 0.04);
  // The same graph with s in an identity window measures the round metric.
  const auto g0 = meshed_pullback_graph(sch.family, 0.0, pts, 12);
  CHECK(std::abs(dijkstra(g0, 3000).dist[3001] - std::numbers::pi / 2) / (std::numbers::pi / 2) < 0.04);
}

TEST_CASE("schedule enumerates feasible net pairs", "[sphere_flow]") {
  ScheduleOptions opt;
  opt.levels = 1;
  opt.theta_grid = 1;
  opt.cloud_points = 2000;
  const auto sch = build_schedule(opt);
  const auto& net = sch.nets[0];
  const double eps = sch.level_eps[0];
  long long feasible = 0;
  for (std::size_t i = 0; i < net.size(); ++i)
    for (std::size_t j = 0; j < net.size(); ++j)
      if (i != j) {
        const double d = sphere::distance(net[i], net[j]);
        if (d >= 4 * eps && d <= std::numbers::pi - 4 * eps) ++feasible;
      }
  CHECK(static_cast<long long>(sch.entries.size()) == feasible);
  CHECK(static_cast<long long>(sch.family.segments().size()) == feasible);
  CHECK(feasible + sch.skipped_pairs == static_cast<long long>(net.size() * (net.size() - 1)));

  for (const auto& e : sch.entries) {
    const Vec3& x = sch.point(e.level, e.i);
    const Vec3& y = sch.point(e.level, e.j);
    CHECK(std::abs(pullback_distance(sch.family, e.s_mid(), x, y) - e.theta) <=
          4.0 * std::ldexp(1.0, -e.level) + 1e-9);
    // quarter windows at both ends are the identity
    const double quarter = 0.25 * (e.s_end - e.s_begin);
    CHECK(pullback_distance(sch.family, e.s_begin + 0.5 * quarter, x, y) ==
          Approx(sphere::distance(x, y)));
    CHECK(pullback_distance(sch.family, e.s_end - 0.5 * quarter, x, y) ==
          Approx(sphere::distance(x, y)));
  }
  opt.max_entries = 3;
  CHECK_THROWS_AS(build_schedule(opt), ScheduleOverflow);
}

TEST_CASE("reparametrization meets the tensor derivative bounds", "[sphere_flow]") {
  ScheduleOptions opt;
  opt.levels = 3;
  opt.theta_grid = 2;
  opt.cloud_points = 2000;
  const auto sch = build_schedule(opt);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> pick(0, sch.entries.size() - 1);
  double worst1 = 0, worst2 = 0, worst3 = 0;
  for (int trial = 0; trial < 6; ++trial) {
    const auto& e = sch.entries[pick(rng)];
    const auto& seg = *sch.family.segment_at(e.s_mid());
    const double len = e.s_end - e.s_begin;
    for (int k = 0; k <= 30; ++k) {
      const double s = e.s_begin + len * (0.26 + 0.48 * k / 30.0);
      for (int p = 0; p <= 20; ++p) {
        const double off = 2.2 * seg.field.eps * (2.0 * p / 20 - 1.0);
        const Vec3 w = point_at_circle_distance(seg.field, 0.3 * p, off);
        const auto d = tensor_derivatives(sch.family, s, w, 1e-4 * len);
        worst1 = std::max(worst1, d.first);
        worst2 = std::max(worst2, d.second);
        worst3 = std::max(worst3, d.gradient);
      }
    }
  }
  INFO("sup |d_s g| " << worst1 << ", |d_s d_s g| " << worst2 << ", |nabla d_s g| " << worst3);
  CHECK(worst1 <= 1.1);
  CHECK(worst2 <= 1.1);
  CHECK(worst3 <= 1.1);
  CHECK(std::max({worst1, worst2, worst3}) > 0.5);  // nearly attained, not vacuous
}
