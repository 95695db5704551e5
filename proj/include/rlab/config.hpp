#pragma once

// Run configuration: JSON with defaults, strict key checking, validation
// against the module preconditions, and a stable content hash.

#include "rlab/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

namespace rlab {

using json = nlohmann::json;

inline json default_config() {
  return json::parse(R"({
    "experiment": "default",
    "seed": 1,
    "output": "out",
    "geometry": {
      "reference": "warped",
      "h_inf": 0.5,
      "freeze_radius": 1.0,
      "eps": 0.07,
      "first_level": 3,
      "levels": 4,
      "targets": [0.3, 2.8],
      "ramp_width": 0.05,
      "pair_angle": 2.0
    },
    "mesh": {
      "log_r_min": -48.0,
      "log_r_max": -6.0,
      "shells": 0,
      "sphere_points": 1500,
      "sphere_k": 8
    },
    "angles": {
      "log_t_step": 0.25,
      "refine_levels": 3,
      "tolerance": 0.1
    },
    "embed": {
      "space": "torus",
      "n": 24,
      "refine_n": 32,
      "r": 0.04,
      "energy": 0.999,
      "truncation": "hard"
    },
    "reifenberg": {
      "space": "sharp_cone",
      "eps": 0.05,
      "r": 0.4,
      "scale_count": 4,
      "cone_h": 0.5,
      "rings": 44,
      "per_ring": 6,
      "lattice_side": 41,
      "cone_sphere_points": 320,
      "cone_log_span": 1.5,
      "cone_log_r": -12.0,
      "eps_grid": [0.05, 0.1, 0.2, 0.4],
      "r_grid": [0.1, 0.2, 0.4],
      "net_points": 4,
      "ball_cap": 400,
      "restarts": 4
    },
    "caps": {
      "max_points": 2000000,
      "metric_points": 12000,
      "gh_size": 1500
    }
  })");
}

// Recursively overlays `user` on `base`; keys absent from `base` are errors.
inline void merge_config(json& base, const json& user, const std::string& path = "") {
  if (!user.is_object()) throw ValidationError("config" + path + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("config: unknown key " + key.substr(1));
    json& slot = base[it.key()];
    if (slot.is_object())
      merge_config(slot, it.value(), key);
    else
      slot = it.value();
  }
}

// "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::size_t end = key.size();
  for (;;) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(cfg, patch);
}

// 64-bit FNV-1a over the compact dump; keys are sorted, so equal configs
// hash equally regardless of input order.
inline std::string config_hash(const json& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct GeometryConfig {
  std::string reference;
  double h_inf = 0.5;
  double freeze_radius = 1.0;
  double eps = 0.07;
  int first_level = 3;
  int levels = 4;
  std::vector<double> targets;
  double ramp_width = 0.05;
  double pair_angle = 2.0;
};

struct MeshConfig {
  double log_r_min = -48.0;
  double log_r_max = -6.0;
  int shells = 0;
  int sphere_points = 1500;
  int sphere_k = 8;
};

struct AnglesConfig {
  double log_t_step = 0.25;
  int refine_levels = 3;
  double tolerance = 0.1;
};

struct EmbedConfig {
  std::string space;
  int n = 24;
  int refine_n = 32;
  double r = 0.04;
  double energy = 0.999;
  std::string truncation;
};

struct ReifenbergConfig {
  std::string space;
  double eps = 0.05;
  double r = 0.4;
  int scale_count = 4;
  double cone_h = 0.5;
  int rings = 44;
  int per_ring = 6;
  int lattice_side = 41;
  int cone_sphere_points = 320;
  double cone_log_span = 1.5;
  double cone_log_r = -12.0;  // the cone case tests scales below exp(cone_log_r)
  std::vector<double> eps_grid;
  std::vector<double> r_grid;
  int net_points = 4;
  int ball_cap = 400;
  int restarts = 4;
};

struct CapsConfig {
  long long max_points = 2000000;
  long long metric_points = 12000;
  int gh_size = 1500;
};

struct RunConfig {
  json raw;  // effective configuration after defaults and overrides
  std::string hash;
  std::string experiment;
  std::uint64_t seed = 1;
  std::string output;
  GeometryConfig geometry;
  MeshConfig mesh;
  AnglesConfig angles;
  EmbedConfig embed;
  ReifenbergConfig reifenberg;
  CapsConfig caps;
};

namespace detail {

template <class T>
T config_get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: ") + section + "." + key + " has the wrong type");
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("config: " + what);
}

}  // namespace detail

// Reads and validates every field before anything is computed.
inline RunConfig parse_config(const json& effective) {
  using detail::config_get;
  using detail::require;
  RunConfig c;
  c.raw = effective;
  json hashed = effective;
  hashed.erase("output");  // where results go does not change them
  c.hash = config_hash(hashed);
  try {
    c.experiment = effective.at("experiment").get<std::string>();
    c.seed = effective.at("seed").get<std::uint64_t>();
    c.output = effective.at("output").get<std::string>();
  } catch (const json::exception&) {
    throw ValidationError("config: experiment, seed or output has the wrong type");
  }

  auto& g = c.geometry;
  g.reference = config_get<std::string>(effective, "geometry", "reference");
  g.h_inf = config_get<double>(effective, "geometry", "h_inf");
  g.freeze_radius = config_get<double>(effective, "geometry", "freeze_radius");
  g.eps = config_get<double>(effective, "geometry", "eps");
  g.first_level = config_get<int>(effective, "geometry", "first_level");
  g.levels = config_get<int>(effective, "geometry", "levels");
  g.targets = config_get<std::vector<double>>(effective, "geometry", "targets");
  g.ramp_width = config_get<double>(effective, "geometry", "ramp_width");
  g.pair_angle = config_get<double>(effective, "geometry", "pair_angle");
  require(g.reference == "warped" || g.reference == "flat", "geometry.reference must be warped or flat");
  require(g.h_inf > 0.0 && g.h_inf < 1.0, "geometry.h_inf must lie in (0, 1)");
  require(g.freeze_radius > 0.0, "geometry.freeze_radius must be positive");
  require(g.eps > 0.0 && 4.0 * g.eps < std::numbers::pi / 2, "geometry.eps must lie in (0, pi/8)");
  require(g.first_level >= 0 && g.levels >= 1 && g.levels <= 64, "geometry levels out of range");
  require(!g.targets.empty(), "geometry.targets must not be empty");
  for (double t : g.targets)
    require(t >= 4.0 * g.eps && t <= std::numbers::pi - 4.0 * g.eps,
            "geometry.targets must lie in [4 eps, pi - 4 eps]");
  require(g.ramp_width > 0.0 && g.ramp_width < 0.25, "geometry.ramp_width must lie in (0, 0.25)");
  require(g.pair_angle >= 4.0 * g.eps && g.pair_angle <= std::numbers::pi - 4.0 * g.eps,
          "geometry.pair_angle must lie in [4 eps, pi - 4 eps]");

  auto& m = c.mesh;
  m.log_r_min = config_get<double>(effective, "mesh", "log_r_min");
  m.log_r_max = config_get<double>(effective, "mesh", "log_r_max");
  m.shells = config_get<int>(effective, "mesh", "shells");
  m.sphere_points = config_get<int>(effective, "mesh", "sphere_points");
  m.sphere_k = config_get<int>(effective, "mesh", "sphere_k");
  require(m.log_r_min < m.log_r_max && m.log_r_min > -700.0, "mesh: need log_r_min < log_r_max");
  require(m.shells == 0 || m.shells >= 2, "mesh.shells must be 0 (auto) or >= 2");
  require(m.sphere_points >= 12, "mesh.sphere_points must be >= 12");
  require(m.sphere_k >= 3, "mesh.sphere_k must be >= 3");

  auto& a = c.angles;
  a.log_t_step = config_get<double>(effective, "angles", "log_t_step");
  a.refine_levels = config_get<int>(effective, "angles", "refine_levels");
  a.tolerance = config_get<double>(effective, "angles", "tolerance");
  require(a.log_t_step > 0.0, "angles.log_t_step must be positive");
  require(a.refine_levels >= 0 && a.refine_levels <= 6, "angles.refine_levels must lie in [0, 6]");
  require(a.tolerance > 0.0, "angles.tolerance must be positive");

  auto& e = c.embed;
  e.space = config_get<std::string>(effective, "embed", "space");
  e.n = config_get<int>(effective, "embed", "n");
  e.refine_n = config_get<int>(effective, "embed", "refine_n");
  e.r = config_get<double>(effective, "embed", "r");
  e.energy = config_get<double>(effective, "embed", "energy");
  e.truncation = config_get<std::string>(effective, "embed", "truncation");
  require(e.space == "torus" || e.space == "sphere", "embed.space must be torus or sphere");
  require(e.n >= 3 && e.refine_n >= e.n, "embed: need 3 <= n <= refine_n");
  require(e.r > 0.0, "embed.r must be positive");
  require(e.energy > 0.0 && e.energy <= 1.0, "embed.energy must lie in (0, 1]");
  require(e.truncation == "hard" || e.truncation == "clamped", "embed.truncation must be hard or clamped");

  auto& r = c.reifenberg;
  r.space = config_get<std::string>(effective, "reifenberg", "space");
  r.eps = config_get<double>(effective, "reifenberg", "eps");
  r.r = config_get<double>(effective, "reifenberg", "r");
  r.scale_count = config_get<int>(effective, "reifenberg", "scale_count");
  r.cone_h = config_get<double>(effective, "reifenberg", "cone_h");
  r.rings = config_get<int>(effective, "reifenberg", "rings");
  r.per_ring = config_get<int>(effective, "reifenberg", "per_ring");
  r.lattice_side = config_get<int>(effective, "reifenberg", "lattice_side");
  r.cone_sphere_points = config_get<int>(effective, "reifenberg", "cone_sphere_points");
  r.cone_log_span = config_get<double>(effective, "reifenberg", "cone_log_span");
  r.cone_log_r = config_get<double>(effective, "reifenberg", "cone_log_r");
  r.eps_grid = config_get<std::vector<double>>(effective, "reifenberg", "eps_grid");
  r.r_grid = config_get<std::vector<double>>(effective, "reifenberg", "r_grid");
  r.net_points = config_get<int>(effective, "reifenberg", "net_points");
  r.ball_cap = config_get<int>(effective, "reifenberg", "ball_cap");
  r.restarts = config_get<int>(effective, "reifenberg", "restarts");
  require(r.space == "sharp_cone" || r.space == "flat" || r.space == "cone",
          "reifenberg.space must be sharp_cone, flat or cone");
  require(r.eps > 0.0 && r.r > 0.0, "reifenberg: eps and r must be positive");
  require(r.scale_count >= 1 && r.scale_count <= 30, "reifenberg.scale_count must lie in [1, 30]");
  require(r.cone_h > 0.0 && r.cone_h <= 1.0, "reifenberg.cone_h must lie in (0, 1]");
  require(r.rings >= 2 && r.per_ring >= 1, "reifenberg: rings >= 2 and per_ring >= 1");
  require(r.lattice_side >= 3 && r.lattice_side % 2 == 1, "reifenberg.lattice_side must be odd and >= 3");
  require(r.cone_sphere_points >= 12 && r.cone_log_span > 0.0, "reifenberg cone mesh out of range");
  for (double v : r.eps_grid) require(v > 0.0, "reifenberg.eps_grid entries must be positive");
  for (double v : r.r_grid) require(v > 0.0, "reifenberg.r_grid entries must be positive");
  require(r.net_points >= 1 && r.ball_cap >= 2 && r.restarts >= 1, "reifenberg search sizes out of range");

  auto& k = c.caps;
  k.max_points = config_get<long long>(effective, "caps", "max_points");
  k.metric_points = config_get<long long>(effective, "caps", "metric_points");
  k.gh_size = config_get<int>(effective, "caps", "gh_size");
  require(k.max_points > 0 && k.metric_points > 0 && k.gh_size > 0, "caps must be positive");
  return c;
}

// Defaults, then the user file, then command-line assignments.
inline RunConfig load_config(const json& user, const std::vector<std::string>& overrides = {}) {
  json cfg = default_config();
  merge_config(cfg, user);
  for (const auto& o : overrides) apply_override(cfg, o);
  return parse_config(cfg);
}

}  // namespace rlab
