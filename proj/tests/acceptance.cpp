// Acceptance suite: one PASS/FAIL line per criterion. Criteria listed in
// kKnownFailures are expected to fail with the literal hard truncation; the
// run exits non-zero if any other criterion fails or a known failure passes.

#include "rlab/cone_space.hpp"
#include "rlab/embedding.hpp"
#include "rlab/gh_reifenberg.hpp"
#include "rlab/metric_core.hpp"
#include "rlab/sphere.hpp"
#include "rlab/sphere_flow.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace rlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const Vec3 kY = Vec3::UnitZ();
Vec3 at_angle(double a) { return {std::sin(a), 0.0, std::cos(a)}; }

// 1 ----------------------------------------------------------------------
Outcome metric_axioms() {
  struct Case {
    std::string name;
    FiniteMetricSpace space;
    double tol;
  };
  std::vector<Case> cases;
  cases.push_back({"lattice", flat_lattice(2, 7, 0.1), kTolTriangleExact});
  cases.push_back({"torus", flat_torus(12), kTolTriangleExact});
  cases.push_back({"sphere50", testing::sphere_mesh_space(50), kTolTriangleExact});
  cases.push_back({"sphere400", testing::sphere_mesh_space(400), kTolTriangleExact});
  cases.push_back({"sharp_cone", sharp_cone_disk(0.5, 1.0, 12), kTolTriangleExact});
  {
    const auto sch = pair_schedule(kY, at_angle(2.0), 0.07, {0.3, 2.8}, 3, 1);
    ConeMeshOptions o;
    o.r_min = std::exp(-13.0);
    o.r_max = std::exp(-12.0);
    o.sphere_points = 120;
    const ConeSpace cone(default_profile(0.5, 1.0), sch.family, o, {kY, at_angle(2.0)});
    cases.push_back({"cone", cone.metric_space(0, cone.shells() - 1), kTolTriangleMeshed});
    auto small = o;
    small.sphere_points = 12;
    small.shells = 4;
    const ConeSpace tiny(default_profile(0.5, 1.0), sch.family, small);
    cases.push_back({"cone_small", tiny.metric_space(0, 3), kTolTriangleMeshed});
    auto pts = sphere::fibonacci_points(500);
    const double s = sch.entries[0].s_mid();
    cases.push_back({"pullback", graph_metric(meshed_pullback_graph(sch.family, s, pts, 8)),
                     kTolTriangleExact});
    pts.resize(40);
    cases.push_back({"pullback40", graph_metric(meshed_pullback_graph(sch.family, s, pts, 6)),
                     kTolTriangleExact});
  }
  bool ok = true;
  std::ostringstream d;
  for (const auto& c : cases) {
    const auto rep = validate_metric(c.space, c.tol);
    ok = ok && rep.passed;
    d << c.name << (rep.exhaustive ? "(all)" : "(1e5)") << (rep.passed ? " ok" : " BAD") << "; ";
  }
  return {ok, d.str()};
}

// 2 ----------------------------------------------------------------------
Outcome reverse_triangle() {
  long long triples = 0, failures = 0;
  const double eps = 0.3;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto space = graph_metric(testing::random_graph(36 + static_cast<int>(seed), 50, seed));
    const auto& table = space.geodesics();
    const int n = space.size();
    for (int x = 0; x < n; ++x)
      for (int w = 0; w < n; ++w) {
        const auto path = table.path(x, w);
        for (std::size_t k = 1; k < path.size(); ++k) {
          const int z = path[k];
          for (int y = 0; y < n; ++y) {
            if (y == x) continue;
            const double dxy = space(x, y), dxz = space(x, z), dzy = space(z, y);
            if (std::abs(dxz - dzy) < eps * dxy || dxz < dzy) continue;
            ++triples;
            if (!check_reverse_triangle(space, x, y, z, path, eps, 1e-12).all_passed) ++failures;
          }
        }
      }
  }
  return {failures == 0 && triples > 0,
          "20 graphs, " + std::to_string(triples) + " hypothesis triples, " + std::to_string(failures) +
              " failures"};
}

// 3 ----------------------------------------------------------------------
Outcome volume_preservation() {
  const auto f = build_field(kY, Vec3::UnitX(), 0.1);
  const double div = divergence_check(f, 500, 1e-4);
  const double t = 1.0;
  const auto mesh = sphere::icosphere(3);
  auto exact = [&](const Vec3& p) { return f.rotate(p, t); };
  double worst = 0.0;
  for (const auto& face : mesh.faces)
    worst = std::max(worst, std::abs(cell_area_ratio(exact, mesh.vertices[face[0]], mesh.vertices[face[1]],
                                                     mesh.vertices[face[2]], 1024) - 1.0));
  // The closed-form rotation is the flow of f; spot-check it against RK4.
  double flow_gap = 0.0;
  for (int k = 0; k < static_cast<int>(mesh.vertices.size()); k += 23)
    flow_gap = std::max(flow_gap, (flow(f, mesh.vertices[k], t, f.eps / 20) - exact(mesh.vertices[k])).norm());
  const bool ok = div <= 1e-5 && worst <= 1e-4 * t && flow_gap <= 1e-6;
  return {ok, "divergence " + fmt("%.2e", div) + ", worst cell area change " + fmt("%.2e", worst) +
                  " over flow time 1 (" + std::to_string(mesh.faces.size()) + " cells), RK4 gap " +
                  fmt("%.1e", flow_gap)};
}

// 4 ----------------------------------------------------------------------
Outcome target_distances() {
  ScheduleOptions opt;
  opt.levels = 4;
  opt.theta_grid = 2;
  opt.cloud_points = 6000;
  const auto sch = build_schedule(opt);
  long long bad = 0;
  double worst = 0.0;
  for (const auto& e : sch.entries) {
    const double err = std::abs(pullback_distance(sch.family, e.s_mid(), sch.point(e.level, e.i),
                                                  sch.point(e.level, e.j)) - e.theta);
    const double bound = 4.0 * std::ldexp(1.0, -e.level) + 1e-9;
    worst = std::max(worst, err / (bound - 1e-9));
    if (err > bound) ++bad;
  }
  return {bad == 0 && !sch.entries.empty(),
          std::to_string(sch.entries.size()) + " entries at levels 1-4, " + std::to_string(bad) +
              " outside 4*2^-N, worst error/bound " + fmt("%.3f", worst)};
}

// 5 ----------------------------------------------------------------------
Outcome flat_cone() {
  std::vector<Vec3> anchors{kY};
  for (double a : {0.2, 0.7, 1.3, 2.0, 2.6, 3.0}) anchors.push_back(at_angle(a));
  ConeMeshOptions o;
  o.r_min = std::exp(-12.0);
  o.r_max = std::exp(-1.0);
  o.sphere_points = 1000;
  const ConeSpace cone(flat_profile(), DiffeoFamily::identity(), o, anchors);
  double worst_exact = 0.0, worst_chord = 0.0;
  int samples = 0;
  // Radial spacing of the innermost shell; the log mesh has constant relative spacing.
  const double dr = cone.radial_step(0);
  for (double lt = -12.0 + std::log(32.0) + 0.05; lt <= -1.0 - std::log(4.0) - 0.05; lt += 1.0) {
    const double t = std::exp(lt);
    if (t < 10.0 * dr) continue;
    for (int k = 1; k < static_cast<int>(anchors.size()); ++k) {
      const double exact = sphere::distance(kY, anchors[static_cast<std::size_t>(k)]);
      const auto s = cone.angle_at_scale(0, k, t);
      worst_exact = std::max(worst_exact, std::abs(s.angle_mesh - exact));
      worst_chord = std::max(worst_chord, std::abs(s.angle_mesh - s.angle_chord));
      ++samples;
    }
  }
  return {samples > 0 && worst_exact <= 0.02 && worst_chord <= 0.02,
          std::to_string(samples) + " angles, worst |mesh - exact| " + fmt("%.1e", worst_exact) +
              ", worst |mesh - chord| " + fmt("%.1e", worst_chord)};
}

// 6 ----------------------------------------------------------------------
Outcome oscillation() {
  const Vec3 z = at_angle(2.0);
  const auto sch = pair_schedule(kY, z, 0.07, {0.3, 2.8}, 3, 4);
  ConeMeshOptions o;
  o.r_min = std::exp(-48.0);
  o.r_max = std::exp(-6.0);
  o.sphere_points = 1500;
  ConeSpace cone(default_profile(0.5, 1.0), sch.family, o, {kY, z});
  cone.set_schedule_entries(sch.entries);
  std::vector<double> grid;
  for (double l = -48.0 + std::log(32.0) + 0.05; l <= -6.0 - std::log(4.0) - 0.05; l += 0.25)
    grid.push_back(std::exp(l));
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = cone.angle_trace(0, 1, grid);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double lo = 1e9, hi = -1e9;
  for (const auto& a : trace) {
    lo = std::min(lo, a.angle_mesh);
    hi = std::max(hi, a.angle_mesh);
  }
  int attained = 0, inside = 0;
  std::ostringstream d;
  for (const auto& e : sch.entries) {
    double best = 1e9;
    bool any = false;
    for (const auto& a : trace)
      if (a.s >= e.s_begin && a.s <= e.s_end) {
        any = true;
        best = std::min(best, std::abs(a.angle_mesh - e.theta));
      }
    if (!any) continue;
    ++inside;
    if (best <= 0.1) ++attained;
    d << "level " << e.level << " theta " << e.theta << " gap " << fmt("%.3f", best) << "; ";
  }
  const bool ok = inside == static_cast<int>(sch.entries.size()) && attained == inside && hi - lo >= 2.0 &&
                  secs <= 600.0;
  d << "range " << fmt("%.3f", hi - lo) << ", " << fmt("%.0f", secs) << " s";
  return {ok, d.str()};
}

// 7 ----------------------------------------------------------------------
Outcome holder() {
  const Vec3 y = Vec3::UnitX(), z(std::cos(1.2), std::sin(1.2), 0.0);
  bool ok = true;
  std::ostringstream d;
  for (double beta : {0.3, 0.5, 0.8}) {
    const auto r = holder_angle_drift(HolderTestMetric{beta, 1.0}, y, z);
    ok = ok && std::abs(r.exponent - beta) <= 0.15;
    d << "beta " << beta << " -> " << fmt("%.3f", r.exponent) << "; ";
  }
  double flat = 0.0;
  for (double v : holder_angle_drift(HolderTestMetric{0.5, 0.0}, y, z).drift) flat = std::max(flat, v);
  ok = ok && flat <= 1e-3;
  d << "flat drift " << fmt("%.1e", flat);
  return {ok, d.str()};
}

// 8 ----------------------------------------------------------------------
FiniteMetricSpace weighted_sphere(int points) {
  const auto s = testing::sphere_mesh_space(points);
  return FiniteMetricSpace(s.distances(),
                           std::vector<double>(static_cast<std::size_t>(points), 4.0 * std::numbers::pi / points),
                           s.coords(), s.geodesics());
}

struct EmbeddingRun {
  long long up_violations = 0, far_violations = 0;
  double product_coarse = 0.0, product_fine = 0.0;
};

EmbeddingRun embedding_run(Truncation mode) {
  EmbeddingRun out;
  const double r = 0.04;
  const auto coarse = build_gram(flat_torus(24), r, mode);
  const auto fine = build_gram(flat_torus(32), r, mode);
  const auto sphere = build_gram(weighted_sphere(400), 0.05, mode);
  for (const auto* g : {&coarse, &fine, &sphere}) {
    out.up_violations += check_upper_bound(*g).violations;
    out.far_violations += check_far_lower_bound(*g).violations;
  }
  out.product_coarse = distortion(coarse).product();
  out.product_fine = distortion(fine).product();
  return out;
}

std::string embedding_detail(const EmbeddingRun& e) {
  const double change = std::abs(e.product_fine - e.product_coarse) / e.product_coarse;
  return std::to_string(e.up_violations) + " upper-bound violations, " + std::to_string(e.far_violations) +
         " far-pair violations, C_up*C_lo " + fmt("%.3f", e.product_coarse) + " -> " +
         fmt("%.3f", e.product_fine) + " (" + fmt("%.1f", 100.0 * change) + "%)";
}

bool embedding_ok(const EmbeddingRun& e) {
  return e.up_violations == 0 && e.far_violations == 0 &&
         std::abs(e.product_fine - e.product_coarse) <= 0.10 * e.product_coarse;
}

Outcome embedding_bounds() {
  const auto hard = embedding_run(Truncation::hard);
  return {embedding_ok(hard), "hard truncation: " + embedding_detail(hard)};
}

// 9 ----------------------------------------------------------------------
struct ProjectionRun {
  int n = 0, dimension = 0;
  double c_lo_before = 0.0, c_lo_after = 0.0, max_excess = 0.0;
};

ProjectionRun projection_run(Truncation mode) {
  const auto g = build_gram(flat_torus(24), 0.04, mode);
  const auto before = distortion(g);
  const auto p = project(g, 0.999);
  return {g.size(), p.dimension, before.c_lo, p.report.c_lo, p.max_excess};
}

bool projection_ok(const ProjectionRun& p) {
  return p.dimension <= p.n / 10 && std::abs(p.c_lo_after - p.c_lo_before) <= 0.10 * p.c_lo_before &&
         p.max_excess <= 0.0;
}

std::string projection_detail(const ProjectionRun& p) {
  return "N = " + std::to_string(p.dimension) + " of " + std::to_string(p.n) + " (need <= n/10), C_lo " +
         fmt("%.3f", p.c_lo_before) + " -> " + fmt("%.3f", p.c_lo_after) + ", max excess " +
         fmt("%.1e", p.max_excess);
}

Outcome projection() {
  const auto hard = projection_run(Truncation::hard);
  return {projection_ok(hard), "hard truncation: " + projection_detail(hard)};
}

// 10 ---------------------------------------------------------------------
Outcome gh_bracket() {
  std::vector<FiniteMetricSpace> corpus;
  for (std::uint64_t s = 1; s <= 3; ++s) corpus.push_back(graph_metric(testing::random_graph(25, 25, s)));
  corpus.push_back(testing::sphere_mesh_space(80));
  corpus.push_back(sampled_euclidean_ball(2, 1.0, 60, 3));
  corpus.push_back(sampled_euclidean_ball(3, 1.0, 60, 4));
  corpus.push_back(sharp_cone_disk(0.5, 1.0, 5));
  corpus.push_back(sharp_cone_disk(1.0, 1.0, 5));
  corpus.push_back(flat_lattice(2, 7, 1.0 / 6.0));
  long long pairs = 0, inverted = 0;
  double self_worst = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    self_worst = std::max(self_worst, gh_upper(corpus[i], corpus[i]).value);
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      ++pairs;
      if (gh_lower(corpus[i], corpus[j]) > gh_upper(corpus[i], corpus[j]).value) ++inverted;
    }
  }

  const int rings = 44;
  const auto cone = sharp_cone_disk(0.5, 1.0, rings, 6);
  const auto disk = sharp_cone_disk(1.0, 1.0, rings, 6);
  ClassifyOptions copt;
  copt.scale_count = 3;
  copt.resolution = std::max(1.0, 2.0 * std::numbers::pi / 6) / rings;
  const auto tip = reifenberg_classify(cone, 0, 0.05, 0.2, model_reference(disk, 0, copt.ball_cap), copt);
  bool tip_fails = true;
  int tip_scales = 0;
  for (const auto& sc : tip.scales) {
    if (sc.verdict == Verdict::unresolved) continue;
    ++tip_scales;
    tip_fails = tip_fails && sc.verdict == Verdict::fail;
  }

  const int side = 41;
  const double h = 1.0 / (side - 1);
  const auto lat = flat_lattice(2, side, h);
  const int centre = side * side / 2;
  ClassifyOptions lopt;
  lopt.scale_count = 3;
  const auto ref = model_reference(lat, centre, lopt.ball_cap);
  bool flat_pass = true;
  int flat_scales = 0, flat_points = 0;
  for (int dx = -4; dx <= 4; dx += 2)
    for (int dy = -4; dy <= 4; dy += 4) {
      const auto p = reifenberg_classify(lat, centre + dy * side + dx, 0.1, 0.5, ref, lopt);
      ++flat_points;
      for (const auto& sc : p.scales) {
        if (sc.verdict == Verdict::unresolved) continue;
        ++flat_scales;
        flat_pass = flat_pass && sc.verdict == Verdict::pass;
      }
    }

  const bool ok = inverted == 0 && self_worst <= 1e-12 && tip_fails && tip_scales > 0 && flat_pass &&
                  flat_scales > 0;
  return {ok, std::to_string(pairs) + " pairs, " + std::to_string(inverted) + " with lower > upper; self " +
                  fmt("%.1e", self_worst) + "; sharp tip fails at " + std::to_string(tip_scales) +
                  " scale(s) <= 0.2: " + (tip_fails ? "yes" : "no") + "; flat interior passes at " +
                  std::to_string(flat_scales) + " point-scales over " + std::to_string(flat_points) +
                  " points: " + (flat_pass ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::set<int> kKnownFailures{8, 9};
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric axioms", metric_axioms},
      {"reverse triangle", reverse_triangle},
      {"volume preservation", volume_preservation},
      {"target distances", target_distances},
      {"flat cone oracle", flat_cone},
      {"angle oscillation", oscillation},
      {"Holder drift", holder},
      {"embedding bounds", embedding_bounds},
      {"projection", projection},
      {"GH bracket", gh_bracket},
  };
  std::ofstream log("acceptance_results.txt");
  int unexpected = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool known = kKnownFailures.count(id) > 0;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[k].first << ": " << o.detail;
    if (known) line << (o.pass ? " (listed as a known failure; update the list)" : " (known failure)");
    std::cout << line.str() << std::endl;
    log << line.str() << '\n';
    if (o.pass == known) ++unexpected;
  }
  // The clamped variant of rho, reported for comparison with 8 and 9.
  {
    const auto e = embedding_run(Truncation::clamped);
    const auto p = projection_run(Truncation::clamped);
    std::ostringstream line;
    line << "INFO clamped truncation: " << embedding_detail(e) << " [" << (embedding_ok(e) ? "meets" : "misses")
         << " 8]; " << projection_detail(p) << " [" << (projection_ok(p) ? "meets" : "misses") << " 9]";
    std::cout << line.str() << std::endl;
    log << line.str() << '\n';
  }
  return unexpected == 0 ? 0 : 1;
}
