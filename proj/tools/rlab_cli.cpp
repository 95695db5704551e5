// rlab: build the warped cone, trace angles, measure the L2 embedding and
// classify Reifenberg points, all from one JSON configuration.

#include "rlab/cone_space.hpp"
#include "rlab/config.hpp"
#include "rlab/embedding.hpp"
#include "rlab/gh_reifenberg.hpp"
#include "rlab/sphere.hpp"
#include "rlab/sphere_flow.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef RLAB_VERSION
#define RLAB_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace rlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitResource = 3;
constexpr int kExitInconclusive = 4;

struct Context {
  RunConfig cfg;
  fs::path out;
  bool force = false;
};

// ---------------------------------------------------------------------------
// Output files carry the config hash; an existing file written under
// another hash is only replaced with --force.

std::string embedded_hash(const fs::path& p) {
  std::ifstream in(p);
  if (p.extension() == ".json") {
    try {
      const json j = json::parse(in);
      return j.value("config_hash", std::string());
    } catch (const json::exception&) {
      return {};
    }
  }
  std::string line;
  const std::string tag = "# config_hash: ";
  while (std::getline(in, line) && line.rfind("#", 0) == 0)
    if (line.rfind(tag, 0) == 0) return line.substr(tag.size());
  return {};
}

void guard(const Context& ctx, const fs::path& p) {
  if (!fs::exists(p) || ctx.force) return;
  const std::string h = embedded_hash(p);
  if (h != ctx.cfg.hash)
    throw ValidationError("refusing to overwrite " + p.string() + " written under config " +
                          (h.empty() ? std::string("<none>") : h) + " (current " + ctx.cfg.hash +
                          "); pass --force");
}

void write_json(const Context& ctx, const std::string& name, json body) {
  const fs::path p = ctx.out / name;
  guard(ctx, p);
  body["config"] = ctx.cfg.raw;
  body["config_hash"] = ctx.cfg.hash;
  body["version"] = RLAB_VERSION;
  std::ofstream os(p);
  os << body.dump(2) << '\n';
  if (!os) throw Error("cannot write " + p.string());
}

void write_csv(const Context& ctx, const std::string& name, const std::string& body) {
  const fs::path p = ctx.out / name;
  guard(ctx, p);
  std::ofstream os(p);
  os << "# config: " << ctx.cfg.raw.dump() << '\n'
     << "# config_hash: " << ctx.cfg.hash << '\n'
     << body;
  if (!os) throw Error("cannot write " + p.string());
}

// ---------------------------------------------------------------------------
// Construction shared by the subcommands

const Vec3 kPairY = Vec3::UnitZ();
Vec3 pair_z(const RunConfig& c) {
  return {std::sin(c.geometry.pair_angle), 0.0, std::cos(c.geometry.pair_angle)};
}

Schedule make_schedule(const RunConfig& c) {
  const auto& g = c.geometry;
  return pair_schedule(kPairY, pair_z(c), g.eps, g.targets, g.first_level, g.levels, g.ramp_width);
}

ConeMeshOptions mesh_options(const RunConfig& c) {
  ConeMeshOptions o;
  o.r_min = std::exp(c.mesh.log_r_min);
  o.r_max = std::exp(c.mesh.log_r_max);
  o.shells = c.mesh.shells;
  o.sphere_points = c.mesh.sphere_points;
  o.sphere_k = c.mesh.sphere_k;
  o.max_points = c.caps.max_points;
  return o;
}

bool is_flat(const RunConfig& c) { return c.geometry.reference == "flat"; }

ConeSpace make_cone(const RunConfig& c, const ConeMeshOptions& o, const Schedule& sch) {
  if (is_flat(c)) return mesh_cone(flat_profile(), DiffeoFamily::identity(), o, {kPairY, pair_z(c)});
  ConeSpace cone(default_profile(c.geometry.h_inf, c.geometry.freeze_radius), sch.family, o,
                 {kPairY, pair_z(c)});
  cone.set_schedule_entries(sch.entries);
  return cone;
}

json schedule_json(const Schedule& sch) {
  json a = json::array();
  for (const auto& e : sch.entries)
    a.push_back({{"level", e.level}, {"theta", e.theta}, {"s_begin", e.s_begin}, {"s_end", e.s_end},
                 {"peak_angle", e.peak_angle}});
  return a;
}

// ---------------------------------------------------------------------------
// build

int cmd_build(const Context& ctx) {
  const auto& c = ctx.cfg;
  const Schedule sch = make_schedule(c);
  const ConeMeshOptions o = mesh_options(c);
  const ConeSpace cone = make_cone(c, o, sch);
  json m;
  m["reference"] = is_flat(c) ? "flat" : "warped";
  m["shells"] = cone.shells();
  m["sphere_points"] = cone.sphere_size();
  m["point_count"] = cone.point_count();
  m["r_min"] = o.r_min;
  m["r_max"] = o.r_max;
  m["log_spacing"] = cone.log_spacing();
  if (!is_flat(c)) {
    const ProfileCheck pc = check_profile(cone.profile());
    m["profile_check"] = {{"passed", pc.passed}};
    m["schedule"] = schedule_json(sch);
    std::ostringstream s;
    write_schedule_csv(s, sch);
    write_csv(ctx, "schedule.csv", s.str());
  }
  std::ostringstream sh;
  sh << "shell,r,h,f\n";
  sh.precision(17);
  for (int k = 0; k < cone.shells(); ++k) {
    const double r = cone.radii()[static_cast<std::size_t>(k)];
    sh << k << ',' << r << ',' << cone.profile().h(r) << ',' << cone.profile().f(r) << '\n';
  }
  write_csv(ctx, "shells.csv", sh.str());
  write_json(ctx, "manifest.json", m);
  std::cout << "built " << m["reference"].get<std::string>() << " cone: " << cone.shells()
            << " shells x " << cone.sphere_size() << " directions, config " << c.hash << '\n';
  return kExitOk;
}

void require_build(const Context& ctx) {
  const fs::path p = ctx.out / "manifest.json";
  if (!fs::exists(p)) throw MissingBuild("no manifest.json in " + ctx.out.string() + "; run build first");
  if (embedded_hash(p) != ctx.cfg.hash)
    throw MissingBuild("manifest.json in " + ctx.out.string() + " was built under another config");
}

// ---------------------------------------------------------------------------
// angles

// Sample t on a ln t grid keeping the distance window [t/32, 4t] in the mesh.
std::vector<double> trace_grid(const RunConfig& c) {
  const double lo = c.mesh.log_r_min + std::log(32.0) + 0.05;
  const double hi = c.mesh.log_r_max - std::log(4.0) - 0.05;
  std::vector<double> t;
  for (double l = lo; l <= hi; l += c.angles.log_t_step) t.push_back(std::exp(l));
  if (t.empty()) throw ValidationError("angles: mesh range too short for the distance window");
  return t;
}

std::vector<AngleSample> parallel_trace(const ConeSpace& cone, const std::vector<double>& grid,
                                        int refine) {
  std::vector<AngleSample> out(grid.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16u));
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < grid.size(); k += workers) out[k] = cone.angle_at_scale(0, 1, grid[k], refine);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

int cmd_angles(const Context& ctx) {
  require_build(ctx);
  const auto& c = ctx.cfg;
  const Schedule sch = make_schedule(c);
  const ConeSpace cone = make_cone(c, mesh_options(c), sch);
  const auto grid = trace_grid(c);
  const auto trace = parallel_trace(cone, grid, c.angles.refine_levels);

  std::ostringstream s;
  write_trace_csv(s, trace);
  write_csv(ctx, "angles.csv", s.str());

  double lo = 1e9, hi = -1e9;
  for (const auto& a : trace) {
    lo = std::min(lo, a.angle_mesh);
    hi = std::max(hi, a.angle_mesh);
  }
  json levels = json::array();
  int attained = 0, inside = 0;
  if (!is_flat(c)) {
    for (const auto& e : sch.entries) {
      double best = -1.0, best_t = 0.0;
      int samples = 0;
      for (const auto& a : trace) {
        if (a.s < e.s_begin || a.s > e.s_end) continue;
        ++samples;
        if (best < 0.0 || std::abs(a.angle_mesh - e.theta) < std::abs(best - e.theta)) {
          best = a.angle_mesh;
          best_t = a.t;
        }
      }
      const bool ok = samples > 0 && std::abs(best - e.theta) <= c.angles.tolerance;
      if (samples > 0) ++inside;
      if (ok) ++attained;
      json row = {{"level", e.level}, {"theta", e.theta}, {"samples", samples}, {"attained", ok}};
      if (samples > 0) {
        row["closest_angle"] = best;
        row["closest_t"] = best_t;
      }
      levels.push_back(row);
    }
  }
  json summary = {{"samples", trace.size()},
                  {"angle_min", lo},
                  {"angle_max", hi},
                  {"oscillation", hi - lo},
                  {"levels", levels},
                  {"levels_in_range", inside},
                  {"levels_attained", attained}};
  write_json(ctx, "angles_summary.json", summary);
  std::cout << "angle trace: " << trace.size() << " samples, range [" << lo << ", " << hi << "], "
            << attained << '/' << inside << " levels attained\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// embed

FiniteMetricSpace embed_space(const RunConfig& c, int n) {
  if (c.embed.space == "torus") return flat_torus(n);
  const int points = n * n;
  const auto pts = sphere::fibonacci_points(points);
  const WeightedGraph g =
      knn_graph(pts, 6, [](const Vec3& a, const Vec3& b) { return sphere::distance(a, b); });
  const FiniteMetricSpace s = graph_metric(g);
  return FiniteMetricSpace(s.distances(),
                           std::vector<double>(static_cast<std::size_t>(points), 4.0 * std::numbers::pi / points),
                           {}, s.geodesics());
}

json distortion_json(const DistortionReport& d) {
  return {{"c_up", d.c_up}, {"c_lo", d.c_lo}, {"product", d.product()}, {"pairs", d.pairs},
          {"degenerate", d.degenerate}};
}

json measure_embedding(const RunConfig& c, int n, Truncation mode, std::string& projection_csv) {
  const FiniteMetricSpace base = embed_space(c, n);
  if (base.size() > c.caps.metric_points) throw SizeCap("embed: space larger than caps.metric_points");
  const EmbeddingGram g = build_gram(base, c.embed.r, mode);
  const DistortionReport before = distortion(g);
  const BoundCheck up = check_upper_bound(g);
  const BoundCheck far = check_far_lower_bound(g);
  json j = {{"n", n},
            {"points", base.size()},
            {"before", distortion_json(before)},
            {"upper_bound_violations", up.violations},
            {"upper_bound_pairs", up.pairs},
            {"far_lower_violations", far.violations},
            {"far_lower_pairs", far.pairs}};
  const Projection p = project(g, c.embed.energy);
  j["projection"] = {{"dimension", p.dimension},
                     {"captured", p.captured},
                     {"after", distortion_json(p.report)},
                     {"max_excess", p.max_excess}};
  std::ostringstream s;
  write_projection_csv(s, p);
  projection_csv = s.str();
  return j;
}

int cmd_embed(const Context& ctx) {
  const auto& c = ctx.cfg;
  const Truncation mode = c.embed.truncation == "hard" ? Truncation::hard : Truncation::clamped;
  std::string csv, csv_refined;
  json rep;
  rep["truncation"] = c.embed.truncation;
  rep["space"] = c.embed.space;
  rep["r"] = c.embed.r;
  rep["energy"] = c.embed.energy;
  rep["coarse"] = measure_embedding(c, c.embed.n, mode, csv);
  if (c.embed.refine_n > c.embed.n) {
    rep["refined"] = measure_embedding(c, c.embed.refine_n, mode, csv_refined);
    const double a = rep["coarse"]["before"]["product"].get<double>();
    const double b = rep["refined"]["before"]["product"].get<double>();
    rep["product_change"] = std::abs(b - a) / a;
  }
  write_json(ctx, "embed_report.json", rep);
  write_csv(ctx, "projection.csv", csv);
  std::cout << "embedding: C_up*C_lo " << rep["coarse"]["before"]["product"].get<double>()
            << ", projection dimension " << rep["coarse"]["projection"]["dimension"].get<int>()
            << " of " << rep["coarse"]["points"].get<int>() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reifenberg

json profile_json(const ReifenbergProfile& p) {
  json scales = json::array();
  for (const auto& s : p.scales)
    scales.push_back({{"s", s.s}, {"points", s.points}, {"lower", s.lower}, {"upper", s.upper},
                      {"verdict", to_string(s.verdict)}});
  return {{"point", p.point}, {"eps", p.eps}, {"r", p.r}, {"resolution", p.resolution},
          {"verdict", to_string(p.verdict)}, {"scales", scales}};
}

struct ClassifiedRun {
  std::vector<ReifenbergProfile> profiles;  // first entry is the headline point
  std::vector<UniformRow> uniform;
  json extra = json::object();
};

ClassifiedRun reifenberg_planar(const RunConfig& c, ClassifyOptions opt) {
  const auto& rc = c.reifenberg;
  ClassifiedRun run;
  if (rc.space == "sharp_cone") {
    const long long count = 1 + static_cast<long long>(rc.per_ring) * rc.rings * (rc.rings + 1) / 2;
    if (count > c.caps.metric_points) throw SizeCap("reifenberg: disk mesh larger than caps.metric_points");
    const auto cone = sharp_cone_disk(rc.cone_h, 1.0, rc.rings, rc.per_ring);
    const auto disk = sharp_cone_disk(1.0, 1.0, rc.rings, rc.per_ring);
    // Radial spacing 1/rings, spacing along a ring 2 pi / (per_ring rings).
    opt.resolution = std::max(1.0, 2.0 * std::numbers::pi / rc.per_ring) / rc.rings;
    const auto ref = model_reference(disk, 0, opt.ball_cap);
    run.profiles.push_back(reifenberg_classify(cone, 0, rc.eps, rc.r, ref, opt));
    run.uniform = uniform_profile(cone, {0}, rc.eps_grid, rc.r_grid, ref, opt);
    run.extra["cone_h"] = rc.cone_h;
    run.extra["diameter_ratio_oracle"] = std::max(1.0, 2.0 * std::sin(0.5 * rc.cone_h * std::numbers::pi)) / 2.0;
    return run;
  }
  const int side = rc.lattice_side;
  const double h = 1.0 / (side - 1);
  if (static_cast<long long>(side) * side > c.caps.metric_points)
    throw SizeCap("reifenberg: lattice larger than caps.metric_points");
  const auto lat = flat_lattice(2, side, h);
  const int centre = (side * side) / 2;
  opt.resolution = h;
  const auto ref = model_reference(lat, centre, opt.ball_cap);
  std::vector<int> net{centre};
  for (int k = 1; static_cast<int>(net.size()) < rc.net_points && k < side / 4; ++k) {
    net.push_back(centre + k);
    if (static_cast<int>(net.size()) < rc.net_points) net.push_back(centre - k * side);
  }
  for (int p : net) run.profiles.push_back(reifenberg_classify(lat, p, rc.eps, rc.r, ref, opt));
  run.uniform = uniform_profile(lat, net, rc.eps_grid, rc.r_grid, ref, opt);
  return run;
}

// Tip of the warped cone against its flat twin on the same mesh. Each shell
// point is hinted toward the flat point nearest its image under phi_{f(r)},
// the shell-wise isometry onto the round sphere.
ClassifiedRun reifenberg_cone(const RunConfig& c, ClassifyOptions opt) {
  const auto& rc = c.reifenberg;
  ClassifiedRun run;
  const Schedule sch = make_schedule(c);
  const double r = std::exp(rc.cone_log_r);
  const double s_min = dyadic_scales(r, rc.scale_count).back();
  ConeMeshOptions o = mesh_options(c);
  o.sphere_points = rc.cone_sphere_points;
  o.r_max = r * 1.0001;
  o.r_min = s_min * std::exp(-rc.cone_log_span);
  o.shells = 0;
  const ConeSpace warped = make_cone(c, o, sch);
  const ConeSpace flat = mesh_cone(flat_profile(), DiffeoFamily::identity(), o, {kPairY, pair_z(c)});
  const auto X = warped.metric_space(0, warped.shells() - 1, c.caps.metric_points);
  const auto F = flat.metric_space(0, flat.shells() - 1, c.caps.metric_points);
  const int tip = X.size() - 1;
  const int n = warped.sphere_size();
  std::vector<int> image(static_cast<std::size_t>(X.size()), tip);
  std::vector<Vec3> dirs = warped.directions();
  for (int k = 0; k < warped.shells(); ++k) {
    const double s = warped.profile().f(warped.radii()[static_cast<std::size_t>(k)]);
    for (int i = 0; i < n; ++i) {
      const Vec3 w = warped.family().map(s, dirs[static_cast<std::size_t>(i)]);
      int arg = 0;
      double best = 1e9;
      for (int j = 0; j < n; ++j) {
        const double d = sphere::distance(w, dirs[static_cast<std::size_t>(j)]);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      image[static_cast<std::size_t>(k * n + i)] = k * n + arg;
    }
  }
  opt.resolution = 0.0;
  opt.relative_resolution = std::sqrt(4.0 * std::numbers::pi / n);
  run.profiles.push_back(reifenberg_classify_twin(X, F, tip, rc.eps, r, opt, image));
  run.extra["mesh_points"] = X.size();
  run.extra["relative_spacing"] = opt.relative_resolution;
  return run;
}

int cmd_reifenberg(const Context& ctx) {
  const auto& c = ctx.cfg;
  const auto& rc = c.reifenberg;
  ClassifyOptions opt;
  opt.scale_count = rc.scale_count;
  opt.ball_cap = rc.ball_cap;
  opt.gh.restarts = rc.restarts;
  opt.gh.seed = c.seed;
  opt.gh.size_cap = c.caps.gh_size;
  ClassifiedRun run = rc.space == "cone" ? reifenberg_cone(c, opt) : reifenberg_planar(c, opt);

  json profiles = json::array();
  for (const auto& p : run.profiles) profiles.push_back(profile_json(p));
  json uniform = json::array();
  for (const auto& u : run.uniform) uniform.push_back({{"eps", u.eps}, {"r", u.r}});
  json rep = {{"space", rc.space}, {"profiles", profiles}, {"uniform", uniform}, {"details", run.extra}};
  write_json(ctx, "reifenberg.json", rep);

  std::ostringstream csv;
  csv << "point,eps,r,verdict\n";
  for (const auto& p : run.profiles) {
    csv << p.point << ',' << p.eps << ',' << p.r << ',' << to_string(p.verdict) << '\n';
    for (double e : rc.eps_grid)
      for (double rr : rc.r_grid)
        csv << p.point << ',' << e << ',' << rr << ',' << to_string(p.classify(e, rr)) << '\n';
  }
  write_csv(ctx, "reifenberg.csv", csv.str());

  bool all_inconclusive = true;
  for (const auto& p : run.profiles) {
    std::cout << "point " << p.point << ": " << to_string(p.verdict) << '\n';
    if (p.verdict != Verdict::inconclusive) all_inconclusive = false;
  }
  return all_inconclusive ? kExitInconclusive : kExitOk;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const Context& ctx) {
  json rep = json::object();
  int found = 0;
  std::ostringstream md;
  md << "# Run report\n\nconfig hash `" << ctx.cfg.hash << "`\n\n";
  for (const char* name : {"manifest.json", "angles_summary.json", "embed_report.json", "reifenberg.json"}) {
    const fs::path p = ctx.out / name;
    if (!fs::exists(p)) continue;
    std::ifstream in(p);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(p.string() + ": " + e.what());
    }
    ++found;
    const bool fresh = j.value("config_hash", std::string()) == ctx.cfg.hash;
    j.erase("config");
    rep[name] = {{"fresh", fresh}, {"content", j}};
    md << "## " << name << (fresh ? "" : " (stale: other config)") << "\n\n";
    if (std::string(name) == "manifest.json")
      md << "- reference: " << j.value("reference", "") << "\n- points: " << j.value("point_count", 0LL) << "\n";
    else if (std::string(name) == "angles_summary.json")
      md << "- oscillation: " << j.value("oscillation", 0.0) << "\n- levels attained: "
         << j.value("levels_attained", 0) << " of " << j.value("levels_in_range", 0) << "\n";
    else if (std::string(name) == "embed_report.json")
      md << "- distortion product: " << j["coarse"]["before"].value("product", 0.0)
         << "\n- projection dimension: " << j["coarse"]["projection"].value("dimension", 0) << "\n";
    else
      for (const auto& p : j["profiles"])
        md << "- point " << p.value("point", -1) << ": " << p.value("verdict", "") << "\n";
    md << '\n';
  }
  if (found == 0) throw MissingBuild("nothing to report in " + ctx.out.string());
  write_json(ctx, "report.json", rep);
  const fs::path p = ctx.out / "report.md";
  guard(ctx, p);
  std::ofstream os(p);
  os << "<!-- config_hash: " << ctx.cfg.hash << " -->\n" << md.str();
  std::cout << md.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rlab: warped cones, angle oscillation, L2 embeddings and Reifenberg checks"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out_dir;
  bool force = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--out", out_dir, "output directory (overrides config 'output')");
  app.add_option("--set", overrides, "override a config value, e.g. --set mesh.sphere_points=800");
  app.add_flag("--force", force, "overwrite outputs written under a different config");
  app.fallthrough();
  auto* build = app.add_subcommand("build", "construct the cone mesh and schedule");
  auto* angles = app.add_subcommand("angles", "trace the comparison angle along radial geodesics");
  auto* embed = app.add_subcommand("embed", "measure the truncated-distance embedding");
  auto* reif = app.add_subcommand("reifenberg", "classify Reifenberg points");
  auto* report = app.add_subcommand("report", "summarise the outputs of a run");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitValidation;
  }

  try {
    json user = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ValidationError("cannot open config " + config_path);
      try {
        user = json::parse(in);
      } catch (const json::parse_error& e) {
        throw FormatError(config_path + ": " + e.what());
      }
    }
    if (seed >= 0) overrides.push_back("seed=" + std::to_string(seed));
    if (!out_dir.empty()) overrides.push_back("output=" + json(out_dir).dump());
    Context ctx{load_config(user, overrides), {}, force};
    ctx.out = ctx.cfg.output;
    fs::create_directories(ctx.out);
    if (*build) return cmd_build(ctx);
    if (*angles) return cmd_angles(ctx);
    if (*embed) return cmd_embed(ctx);
    if (*reif) return cmd_reifenberg(ctx);
    if (*report) return cmd_report(ctx);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ResourceCapError& e) {
    std::cerr << "resource cap: " << e.what() << '\n';
    return kExitResource;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
