#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "ddv/error.hpp"
#include "support.hpp"

using namespace ddv;
using namespace ddv::cli;
namespace fs = std::filesystem;

namespace {

json tiny_config() {
  return json::parse(R"({
    "experiment": "tiny", "seed": 3,
    "corpus": {"preset": "default", "patients_per_cohort": 12, "max_visits": 8, "mean_visits": 3.0},
    "visit_training": {"epochs": 3, "batch_size": 16},
    "patient_training": {"epochs": 3, "batch_size": 16},
    "q": 8, "p": 8, "p_sweep": [4, 8],
    "sigmas": [0.0, 1.0], "ns": [5],
    "attack": {"visit_stage": {"epochs": 2}, "patient_stage": {"epochs": 2}, "joint_stage": {"epochs": 1}},
    "metric": {"iterations": 5}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> bundle(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
  return files;
}

bool has_check(const CommandResult& r, const std::string& name, bool passed) {
  for (const auto& c : r.checks)
    if (c.name.find(name) != std::string::npos && c.passed == passed) return true;
  return false;
}

fs::path scenario(const std::string& name) { return fs::path(DDV_SCENARIO_DIR) / name; }

}  // namespace

TEST_CASE("config parsing applies overrides and rejects bad input") {
  const auto c = parse_config(tiny_config());
  CHECK(c.seed == 3);
  CHECK(c.corpus.patients_per_cohort == 12);
  CHECK(c.visit_training.epochs == 3);
  CHECK(c.visit_training.learning_rate == 0.02);  // experiment default, not overridden
  CHECK(c.attack.joint_stage.epochs == 1);
  CHECK(parse_config(to_json(c)).seed == 3);
  CHECK(config_hash(to_json(parse_config(to_json(c)))) == config_hash(to_json(c)));

  auto bad = [](const char* text) { CHECK_THROWS_AS(parse_config(json::parse(text)), ConfigError); };
  bad(R"({"sede": 1})");
  bad(R"({"seed": "seven"})");
  bad(R"({"corpus": {"preset": "huge"}})");
  bad(R"({"corpus": {"patients": 3}})");
  bad(R"({"sigmas": [0.4, 0.2]})");
  bad(R"({"sigmas": [-0.1]})");
  bad(R"({"train_fraction": 1.5})");
  bad(R"({"tasks": [5]})");
  bad(R"({"metric": {"margin": 0}})");
  bad(R"({"q": 0})");
}

TEST_CASE("load_config reports missing and malformed files") {
  testing::TempDir dir("cfg");
  CHECK_THROWS_AS(load_config(dir / "none.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("bundles are byte-identical for a fixed seed and verify") {
  testing::TempDir dir("bundle");
  const auto cfg = parse_config(tiny_config());
  const auto a = cmd_train(cfg, dir / "a");
  const auto b = cmd_train(cfg, dir / "b");
  CHECK(a.ok());
  CHECK(bundle(dir / "a") == bundle(dir / "b"));
  CHECK(bundle(dir / "a").count("manifest.json") == 1);
  CHECK(cmd_verify(dir / "a").ok());

  auto other = cfg;
  other.seed = 4;
  cmd_train(other, dir / "c");
  CHECK(bundle(dir / "a").at("visit.model") != bundle(dir / "c").at("visit.model"));
}

TEST_CASE("verify detects a modified file and a modified config") {
  testing::TempDir dir("verify");
  const auto cfg = parse_config(tiny_config());
  REQUIRE(cmd_corpus_gen(cfg, dir / "b").ok());
  REQUIRE(cmd_verify(dir / "b").ok());
  {
    std::ofstream out(dir / "b" / "corpus_stats.tsv", std::ios::app);
    out << "extra\n";
  }
  const auto r = cmd_verify(dir / "b");
  CHECK_FALSE(r.ok());
  CHECK(has_check(r, "corpus_stats.tsv", false));

  REQUIRE(cmd_corpus_gen(cfg, dir / "c").ok());
  auto manifest = json::parse(slurp(dir / "c" / "manifest.json"));
  manifest["config"]["seed"] = 99;
  std::ofstream(dir / "c" / "manifest.json") << manifest.dump(2);
  CHECK_FALSE(cmd_verify(dir / "c").ok());
  CHECK_THROWS(cmd_verify(dir / "missing"));
}

TEST_CASE("sweeps write their tables on a tiny configuration") {
  testing::TempDir dir("sweeps");
  const auto cfg = parse_config(tiny_config());
  cmd_recovery_sweep(cfg, dir / "r");
  CHECK(fs::exists(dir / "r" / "fig4_recovery.tsv"));
  cmd_attack_sweep(cfg, dir / "a");
  const auto table = slurp(dir / "a" / "table1_recovery_vs_noise.tsv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);  // header + 2 sigmas
  cmd_retrieval_eval(cfg, dir / "m");
  CHECK(fs::exists(dir / "m" / "table6_precision.tsv"));
  CHECK(fs::exists(dir / "m" / "metric_library.txt"));
  // Trend checks may fail at this size; the hashes must still verify.
  for (const char* b : {"r", "a", "m"})
    for (const auto& c : cmd_verify(dir / b).checks)
      if (c.name.find("recorded checks") == std::string::npos) CHECK_MESSAGE(c.passed, b << ": " << c.name);
}

TEST_CASE("shipped scenarios pass") {
  testing::TempDir dir("scen");
  for (const char* name : {"happy_path.json", "unauthorized.json", "tamper.json", "replay.json", "concurrent.json",
                           "consumer_flow.json"}) {
    const auto r = cmd_vend_scenario(scenario(name), dir / name);
    for (const auto& c : r.checks) CHECK_MESSAGE(c.passed, name << ": " << c.name << " " << c.detail);
    CHECK(fs::exists(dir / name / "transcript.tsv"));
    CHECK(cmd_verify(dir / name).ok());
  }
}

TEST_CASE("scenario runs are reproducible and the seed override changes them") {
  testing::TempDir dir("scen-rep");
  cmd_vend_scenario(scenario("concurrent.json"), dir / "a");
  cmd_vend_scenario(scenario("concurrent.json"), dir / "b");
  CHECK(bundle(dir / "a") == bundle(dir / "b"));
  cmd_vend_scenario(scenario("concurrent.json"), dir / "c", 99);
  CHECK(slurp(dir / "a" / "snapshot.bin") != slurp(dir / "c" / "snapshot.bin"));
}

TEST_CASE("scenario scripts are validated") {
  testing::TempDir dir("scen-bad");
  auto bad = [&](const char* text) { CHECK_THROWS_AS(run_scenario(json::parse(text), dir / "x"), ConfigError); };
  bad(R"({"providers": ["a"], "actions": [{"t": 0, "do": "dance"}]})");
  bad(R"({"providers": ["a"], "bogus": 1, "actions": []})");
  bad(R"({"faults": {"drop_rate": 2.0}, "providers": ["a"], "actions": []})");
}

TEST_CASE("a failing expectation is reported, not thrown") {
  testing::TempDir dir("scen-fail");
  const auto script = json::parse(R"({
    "seed": 1, "providers": ["alice"], "consumers": [{"name": "bob", "budget": 100}],
    "actions": [
      {"t": 0, "do": "list", "provider": "alice", "record": 0, "sigma": 0.0, "price": 10},
      {"t": 1, "do": "download", "consumer": "bob", "listing": 0, "expect": "ok"}
    ]})");
  const auto r = run_scenario(script, dir / "x");
  CHECK_FALSE(r.ok());
}
