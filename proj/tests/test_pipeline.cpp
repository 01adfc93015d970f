#include "prl/pipeline.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

using namespace prl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string &args, const std::string &env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + PRL_CLI_PATH + "\" -q " +
                          args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

json small_config() {
  return json::parse(R"({
    "files": {"a": "data/a.csv", "b": "data/b.csv"},
    "output_dir": "out",
    "synthetic": {"n_a": 150, "n_b": 150, "overlap": 100, "seed": 7},
    "mcmc": {"iterations": 60, "burn_in": 10, "seed": 3},
    "estimate": {"strata": [{"name": "s", "fm": 5, "tm": 40, "nd": 1, "size": 100}],
                 "jaro_lambda": 0}
  })");
}

fs::path write_config(const fs::path &dir, const json &j, const std::string &name = "c.json") {
  testutil::write_file(dir / name, j.dump(2));
  return dir / name;
}

} // namespace

TEST_CASE("config validation") {
  const fs::path base = testutil::temp_dir("cfg");
  CHECK_NOTHROW(parse_config(small_config(), base));
  auto bad = [&](auto edit) {
    json j = small_config();
    edit(j);
    CHECK_THROWS_AS(parse_config(j, base), ConfigError);
  };
  bad([](json &j) { j.erase("files"); });
  bad([](json &j) { j["mcmc"]["burn_in"] = 60; });
  bad([](json &j) { j["weights"]["method"] = "magic"; });
  bad([](json &j) {
    j["comparators"] = json::parse(
        R"([{"field":"first_name","kind":"jaro_winkler","cut_points":[0.9,0.8]}])");
  });
  bad([](json &j) { j["estimate"]["threshold"] = 0.3; });
  bad([](json &j) { j["mcmc"]["iterations"] = "many"; });
  CHECK_THROWS_AS(load_config(base / "absent.json"), ConfigError);
  testutil::write_file(base / "broken.json", "{ not json");
  CHECK_THROWS_AS(load_config(base / "broken.json"), ConfigError);
  auto over = load_config(write_config(base, small_config()), base / "elsewhere");
  CHECK(over.output_dir == base / "elsewhere");
}

TEST_CASE("command line pipeline") {
  const fs::path dir = testutil::temp_dir("cli");
  const auto cfg = write_config(dir, small_config()).string();
  const fs::path out = dir / "out";

  CHECK(run_cli("frobnicate " + cfg) == 2);
  CHECK(run_cli("run " + (dir / "none.json").string()) == 2);
  REQUIRE(run_cli("synth " + cfg) == 0);
  REQUIRE(fs::exists(dir / "data" / "truth.csv"));

  // downstream stage before its upstream
  CHECK(run_cli("weights " + cfg) == 3);
  REQUIRE(run_cli("run " + cfg) == 0);
  for (auto f : {"manifest.json", "patterns.csv", "weights.csv", "blocks.csv", "trace.txt",
                 "link_probs.csv", "point_estimate.csv", "summary.json", "switch_rates.csv",
                 "estimate.json", "fmr_report.csv", "jaro_estimate.csv"})
    CHECK_MESSAGE(fs::exists(out / f), f);

  const auto manifest = json::parse(testutil::read_file(out / "manifest.json"));
  const auto trace_time = fs::last_write_time(out / "trace.txt");
  const std::string trace = testutil::read_file(out / "trace.txt");
  CHECK(manifest.at("stages").size() == 6);

  SUBCASE("rerun is a no-op") {
    REQUIRE(run_cli("run " + cfg) == 0);
    CHECK(fs::last_write_time(out / "trace.txt") == trace_time);
    CHECK(json::parse(testutil::read_file(out / "manifest.json")) == manifest);
  }
  SUBCASE("forced rerun is deterministic") {
    REQUIRE(run_cli("sample --force " + cfg) == 0);
    CHECK(testutil::read_file(out / "trace.txt") == trace);
  }
  SUBCASE("burn-in override") {
    REQUIRE(run_cli("summarize --burn-in 30 " + cfg) == 0);
    auto s = json::parse(testutil::read_file(out / "summary.json"));
    CHECK(s.at("burn_in") == 30);
    CHECK(s.at("retained") == 30);
    // estimate depends on the burn-in it was run with
    CHECK(run_cli("estimate --burn-in 30 " + cfg) == 0);
  }
  SUBCASE("edited upstream settings make downstream stale") {
    json j = small_config();
    j["comparators"] = json::parse(
        R"([{"field":"first_name","kind":"jaro_winkler","cut_points":[0.8,0.9]},
            {"field":"surname","kind":"jaro_winkler"}])");
    write_config(dir, j);
    CHECK(run_cli("sample " + cfg) == 3);
    CHECK(run_cli("compare " + cfg) == 0);
    CHECK(run_cli("weights " + cfg) == 0);
    CHECK(run_cli("sample " + cfg) == 3);
    CHECK(run_cli("run " + cfg) == 0);
    write_config(dir, small_config());
  }
  SUBCASE("deleted output is detected") {
    fs::remove(out / "weights.csv");
    CHECK(run_cli("block " + cfg) == 3);
    CHECK(run_cli("run " + cfg) == 0);
    CHECK(fs::exists(out / "weights.csv"));
  }
  SUBCASE("output directory from the environment") {
    const fs::path alt = dir / "alt";
    REQUIRE(run_cli("run " + cfg, "PRL_OUTPUT_DIR=" + alt.string()) == 0);
    CHECK(testutil::read_file(alt / "trace.txt") == trace);
  }
}

TEST_CASE("stage hashes track their own settings") {
  const fs::path base = testutil::temp_dir("hash");
  auto a = parse_config(small_config(), base);
  json j = small_config();
  j["mcmc"]["burn_in"] = 20;
  auto b = parse_config(j, base);
  CHECK(stage_config_hash(a, Stage::sample) == stage_config_hash(b, Stage::sample));
  CHECK(stage_config_hash(a, Stage::summarize) != stage_config_hash(b, Stage::summarize));
  RunOptions o;
  o.burn_in = 20;
  CHECK(stage_config_hash(a, Stage::summarize, o) == stage_config_hash(b, Stage::summarize));
  j["blocking"]["w_min"] = 1.5;
  auto c = parse_config(j, base);
  CHECK(stage_config_hash(a, Stage::compare) == stage_config_hash(c, Stage::compare));
  CHECK(stage_config_hash(a, Stage::block) != stage_config_hash(c, Stage::block));
}
