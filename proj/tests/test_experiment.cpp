#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "crossing/experiment.hpp"

using namespace crossing;
namespace fs = std::filesystem;

namespace {

std::string lab() {
  const char* exe = std::getenv("CROSSING_LAB_EXE");
  return exe ? exe : "crossing-lab";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("crossing_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& args) {
  const std::string cmd = lab() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_file(const fs::path& dir, const std::string& name, const std::string& body) {
  const auto p = dir / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("config grammar", "[config]") {
  const auto j = parse_config_text(
      "# comment\n"
      "schema = 1\n"
      "kind = \"renewal\"   # trailing comment\n"
      "atoms = [[0, 0.5], [inf, 0.5]]\n"
      "name.with.dots = \"a # not a comment\"\n"
      "flag = true\n"
      "empty = []\n"
      "neg = -3\n"
      "sci = 1e-10\n");
  CHECK(j["schema"] == 1);
  CHECK(j["kind"] == "renewal");
  CHECK(std::isinf(j["atoms"][1][0].get<double>()));
  CHECK(j["atoms"][0][1].get<double>() == 0.5);
  CHECK(j["name.with.dots"] == "a # not a comment");
  CHECK(j["flag"] == true);
  CHECK(j["empty"].empty());
  CHECK(j["neg"] == -3);
  CHECK(j["sci"].get<double>() == 1e-10);

  CHECK_THROWS_AS(parse_config_text("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("a = [1, 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("a = 1x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("= 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("s = \"open\n"), ConfigError);
}

TEST_CASE("config validation", "[config]") {
  const std::string base = "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.5], [1, 0.5]]\n";
  const auto ok = config_from_json(parse_config_text(base + "master_seed = 7\nR = 6\n"));
  CHECK(ok.kind == ExperimentKind::renewal);
  CHECK(ok.R == 6);
  CHECK(ok.master_seed == 7);
  CHECK(config_from_json(parse_config_text(base + "master_seed = 1\nmode = \"mc\"\n")).R == 64);
  CHECK(config_from_json(parse_config_text(base + "master_seed = 1\n")).R == 14);
  CHECK_THROWS_WITH(config_from_json(parse_config_text(base)), Catch::Matchers::ContainsSubstring("master_seed"));
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\nbogus = 3\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(parse_config_text("schema = 2\nkind = \"renewal\"\nmaster_seed = 1\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(parse_config_text(
                      "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.5], [1, 0.6]]\nmaster_seed = 1\n")),
                  InvalidDistribution);
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\nkind2 = 1\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\nR = 0\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\nmode = \"fast\"\n")), ConfigError);
  CHECK(std::isnan(config_from_json(parse_config_text(base + "master_seed = 1\ntilt = \"auto\"\n")).tilt));
  CHECK(config_from_json(parse_config_text(base + "master_seed = 1\ntilt = 2.5\n")).tilt == 2.5);
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\ntilt = -1\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(parse_config_text(base + "master_seed = 1\ntilt = \"big\"\n")), ConfigError);
}

TEST_CASE("renewal experiment summary", "[experiment]") {
  const auto cfg = config_from_json(parse_config_text(
      "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.5], [1, 0.5]]\nR = 14\nmaster_seed = 3\n"));
  const auto res = compute_experiment(cfg, 1);
  CHECK(res.exit_code == 0);
  const auto& r = res.summary["results"]["renewal"];
  CHECK(r["beta_root"].get<double>() > 0.0);
  CHECK(r["v"].get<double>() > 0.0);
  CHECK(std::abs(r["kernel_mass"].get<double>() - 1.0) < 1e-12);
  CHECK(res.summary["provenance"]["master_seed"] == 3);
  REQUIRE(res.files.size() == 2);
  CHECK(res.files[1].first == "kernel.csv");
  CHECK(res.files[1].second.rfind("r,zbar,nbar,q,g\n", 0) == 0);
}

TEST_CASE("cli run writes artifacts and a report", "[cli]") {
  const auto dir = scratch("cli_run");
  const auto cfg = write_file(dir, "r.cfg",
                              "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.5], [1, 0.5]]\nR = 10\nmaster_seed = 5\n");
  REQUIRE(run("run " + cfg.string() + " --out " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out" / "kernel.csv"));
  CHECK(fs::exists(dir / "out" / "block_table.csv"));
  CHECK(fs::exists(dir / "out" / "summary.json"));
  CHECK(run("report " + (dir / "out").string()) == 0);
  const auto text = emit_report(dir / "out");
  CHECK(text.find("beta (renewal root)") != std::string::npos);
  CHECK(text.find("summary.json `/results/renewal/beta_root`") != std::string::npos);
}

TEST_CASE("csv artifacts do not depend on the worker count", "[cli]") {
  const auto dir = scratch("cli_workers");
  const auto cfg = write_file(dir, "s.cfg",
                              "schema = 1\nkind = \"multid_scan\"\natoms = [[0, 0.5], [1, 0.5]]\nks = [2, 4]\n"
                              "margin = 1.5\nn_envs = 12\nmaster_seed = 9\n");
  // Tiny ks may fail the scan check (exit 2); artifacts are written either way.
  REQUIRE(run("run " + cfg.string() + " --out " + (dir / "a").string() + " --workers 1") != 1);
  REQUIRE(run("run " + cfg.string() + " --out " + (dir / "b").string() + " --workers 3") != 1);
  CHECK(slurp(dir / "a" / "scan.csv") == slurp(dir / "b" / "scan.csv"));
  CHECK(!slurp(dir / "a" / "scan.csv").empty());

  const auto mc = write_file(dir, "t.cfg",
                             "schema = 1\nkind = \"block_table\"\natoms = [[0, 0.5], [1, 0.5]]\nR = 6\nmode = \"mc\"\n"
                             "n_envs = 500\nmaster_seed = 9\n");
  REQUIRE(run("run " + mc.string() + " --out " + (dir / "c").string() + " --workers 1") == 0);
  REQUIRE(run("run " + mc.string() + " --out " + (dir / "d").string() + " --workers 4") == 0);
  CHECK(slurp(dir / "c" / "block_table.csv") == slurp(dir / "d" / "block_table.csv"));
}

TEST_CASE("invalid input leaves no artifacts", "[cli]") {
  const auto dir = scratch("cli_bad");
  const auto bad = write_file(dir, "bad.cfg",
                              "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.5], [1, 0.7]]\nmaster_seed = 1\n");
  CHECK(run("run " + bad.string() + " --out " + (dir / "out").string()) == 1);
  CHECK_FALSE(fs::exists(dir / "out"));
  const auto noseed = write_file(dir, "noseed.cfg", "schema = 1\nkind = \"renewal\"\natoms = [[0, 1]]\n");
  CHECK(run("run " + noseed.string() + " --out " + (dir / "out").string()) == 1);
  CHECK_FALSE(fs::exists(dir / "out"));
  // Guard violation inside a module: exact enumeration budget.
  const auto big = write_file(dir, "big.cfg",
                              "schema = 1\nkind = \"renewal\"\natoms = [[0, 0.25], [1, 0.25], [2, 0.25], [3, 0.25]]\n"
                              "R = 40\nmaster_seed = 1\n");
  CHECK(run("run " + big.string() + " --out " + (dir / "out").string()) == 1);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("report requires artifacts", "[cli]") {
  const auto dir = scratch("cli_empty");
  CHECK(run("report " + dir.string()) == 1);
  CHECK_THROWS_AS(emit_report(dir), ArtifactError);
  CHECK_THROWS_AS(emit_report(dir / "missing"), ArtifactError);
}

TEST_CASE("negative control counts as success when it fails", "[cli]") {
  const auto dir = scratch("cli_control");
  const auto cfg = write_file(dir, "c.cfg",
                              "schema = 1\nkind = \"diagnostics\"\natoms = [[0, 0.9], [inf, 0.1]]\nR = 8\ny = 40\n"
                              "open_paths = true\nbias_envs = 3\npaths_per_env = 200\nn_envs = 200\nn_paths = 300\n"
                              "pool = 200\nmaster_seed = 4\n");
  REQUIRE(run("run " + cfg.string() + " --out " + (dir / "out").string()) == 0);
  const auto s = nlohmann::ordered_json::parse(slurp(dir / "out" / "summary.json"));
  bool found = false;
  for (const auto& c : s["checks"]) {
    if (c["name"] != "xy_tail") continue;
    found = true;
    CHECK(c["expected_failure"] == true);
    CHECK(c["pass"] == false);
    CHECK(c["ok"] == true);
  }
  CHECK(found);
  CHECK(emit_report(dir / "out").find("ok (expected failure)") != std::string::npos);
}

TEST_CASE("failed checks are flagged", "[cli]") {
  const auto dir = scratch("cli_fail");
  const auto cfg = write_file(dir, "f.cfg",
                              "schema = 1\nkind = \"counterexample\"\np_zero = 0.9\nys = [2, 4]\nn_envs = 50\n"
                              "master_seed = 2\n");
  CHECK(run("run " + cfg.string() + " --out " + (dir / "out").string()) == 2);
  const auto text = emit_report(dir / "out");
  CHECK(text.find("**FAIL**") != std::string::npos);
  CHECK(text.find("FAILURES PRESENT") != std::string::npos);
}

TEST_CASE("shipped configs parse", "[config]") {
  const char* dir = std::getenv("CROSSING_CONFIG_DIR");
  REQUIRE(dir != nullptr);
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".cfg") continue;
    INFO(e.path().string());
    CHECK_NOTHROW(load_config(e.path().string()));
    ++n;
  }
  CHECK(n >= 9);
}
