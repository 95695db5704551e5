#include "rlab/config.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace rlab;
namespace fs = std::filesystem;

namespace {

// Small mesh so every subcommand finishes in seconds.
const std::string kSmall =
    " --set mesh.sphere_points=120 --set mesh.log_r_min=-18 --set mesh.log_r_max=-8"
    " --set geometry.levels=1 --set angles.log_t_step=1.0 --set angles.refine_levels=1";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rlab_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(RLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// File body without the echoed config line, which names the output directory.
std::string body(const fs::path& p) {
  const std::string s = slurp(p);
  return s.rfind("# config: ", 0) == 0 ? s.substr(s.find('\n') + 1) : s;
}

}  // namespace

TEST_CASE("config hash ignores key order and output directory", "[config]") {
  const auto a = load_config(json::parse(R"({"seed": 3, "mesh": {"sphere_points": 200, "shells": 10}})"));
  const auto b = load_config(json::parse(R"({"mesh": {"shells": 10, "sphere_points": 200}, "seed": 3})"));
  const auto c = load_config(json::parse(R"({"seed": 3, "output": "elsewhere", "mesh": {"shells": 10, "sphere_points": 200}})"));
  const auto d = load_config(json::parse(R"({"seed": 4, "mesh": {"sphere_points": 200, "shells": 10}})"));
  CHECK(a.hash == b.hash);
  CHECK(a.hash == c.hash);
  CHECK(a.hash != d.hash);
  CHECK(a.hash.size() == 16);
}

TEST_CASE("config overrides and validation", "[config]") {
  const auto c = load_config(json::object(), {"mesh.sphere_points=800", "geometry.targets=[0.5,2.0]",
                                              "experiment=sweep"});
  CHECK(c.mesh.sphere_points == 800);
  CHECK(c.geometry.targets == std::vector<double>{0.5, 2.0});
  CHECK(c.experiment == "sweep");
  CHECK_THROWS_AS(load_config(json::object(), {"mesh.nope=1"}), ValidationError);
  CHECK_THROWS_AS(load_config(json::object(), {"mesh.sphere_points"}), ValidationError);
  CHECK_THROWS_AS(load_config(json::parse(R"({"geometry": {"h_inf": 1.2}})")), ValidationError);
  CHECK_THROWS_AS(load_config(json::parse(R"({"geometry": {"h_inf": "half"}})")), ValidationError);
  CHECK_THROWS_AS(load_config(json::parse(R"({"geometry": {"targets": [0.1]}})")), ValidationError);
  CHECK_THROWS_AS(load_config(json::parse(R"({"embed": {"energy": 0}})")), ValidationError);
  CHECK_THROWS_AS(load_config(json::parse(R"({"reifenberg": {"space": "torus"}})")), ValidationError);
}

TEST_CASE("build and angles round trip through files", "[cli]") {
  const auto dir = scratch("angles");
  const std::string out = " --out " + dir.string() + kSmall;
  CHECK(run("angles" + out) == 2);  // nothing built yet
  CHECK(run("build" + out) == 0);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "schedule.csv"));
  CHECK(run("angles" + out) == 0);
  const std::string csv = slurp(dir / "angles.csv");
  CHECK(csv.rfind("# config: ", 0) == 0);
  CHECK(csv.find("# config_hash: ") != std::string::npos);
  const json summary = json::parse(slurp(dir / "angles_summary.json"));
  CHECK(summary.contains("config_hash"));
  CHECK(summary["config"]["mesh"]["sphere_points"] == 120);

  // A rebuild under another config must not silently replace the outputs.
  CHECK(run("build" + out + " --seed 9") == 2);
  CHECK(run("angles" + out + " --seed 9") == 2);
  CHECK(run("build" + out + " --seed 9 --force") == 0);
  CHECK(json::parse(slurp(dir / "manifest.json"))["config"]["seed"] == 9);
}

TEST_CASE("flat reference build", "[cli]") {
  const auto dir = scratch("flat");
  CHECK(run("build --out " + dir.string() + kSmall + " --set geometry.reference=flat") == 0);
  const json m = json::parse(slurp(dir / "manifest.json"));
  CHECK(m["reference"] == "flat");
  CHECK_FALSE(fs::exists(dir / "schedule.csv"));
}

TEST_CASE("exit codes for validation and resource caps", "[cli]") {
  const auto dir = scratch("codes");
  CHECK(run("build --out " + dir.string() + " --set geometry.h_inf=1.2") == 2);
  CHECK_FALSE(fs::exists(dir / "manifest.json"));
  CHECK(run("build --out " + dir.string() + " --set caps.max_points=1000") == 3);
  CHECK(run("report --out " + dir.string()) == 2);
  CHECK(run("frobnicate") == 2);

  const fs::path cfg = dir / "bad.json";
  std::ofstream(cfg) << "{ not json";
  CHECK(run("build --config " + cfg.string() + " --out " + dir.string()) == 2);
}

TEST_CASE("outputs are identical across reruns", "[cli]") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const std::string args = " --set embed.n=8 --set embed.refine_n=10 --set embed.r=0.05";
  CHECK(run("embed --out " + a.string() + args) == 0);
  CHECK(run("embed --out " + b.string() + args) == 0);
  CHECK(body(a / "projection.csv") == body(b / "projection.csv"));
  json ja = json::parse(slurp(a / "embed_report.json"));
  json jb = json::parse(slurp(b / "embed_report.json"));
  ja.erase("config");
  jb.erase("config");
  CHECK(ja == jb);

  const std::string reif = " --set reifenberg.rings=16 --set reifenberg.r=0.6 --set reifenberg.scale_count=2"
                           " --set reifenberg.ball_cap=120";
  CHECK(run("reifenberg --out " + a.string() + reif) == 0);
  CHECK(run("reifenberg --out " + b.string() + reif) == 0);
  CHECK(body(a / "reifenberg.csv") == body(b / "reifenberg.csv"));
  CHECK(run("report --out " + a.string()) == 0);
  CHECK(fs::exists(a / "report.md"));
}

TEST_CASE("inconclusive-only classification exits with 4", "[cli]") {
  const auto dir = scratch("inconclusive");
  // A shallow cone deficit sits between the two bounds at this eps.
  const std::string args = " --set reifenberg.rings=16 --set reifenberg.cone_h=0.9 --set reifenberg.eps=0.08"
                           " --set reifenberg.r=0.6 --set reifenberg.scale_count=2 --set reifenberg.ball_cap=120";
  CHECK(run("reifenberg --out " + dir.string() + args) == 4);
}
