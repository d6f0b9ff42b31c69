#pragma once

// Experiment and scenario commands behind the `ddv` executable. Each
// command writes a report bundle (tab-separated tables plus manifest.json)
// and returns the invariant checks it ran; the executable exits nonzero if
// any check failed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddv/attack.hpp"
#include "ddv/corpus.hpp"
#include "ddv/embed.hpp"
#include "ddv/metric.hpp"

namespace ddv::cli {

using nlohmann::json;

struct ExperimentConfig {
  std::string experiment = "experiment";
  std::uint64_t seed = 7;
  CorpusConfig corpus = standard_corpus_config();
  std::string corpus_preset = "standard";
  embed::TrainConfig visit_training{30, 32, 0.02, 0.9, 32, 5.0};
  embed::TrainConfig patient_training{40, 16, 0.05, 0.9, 32, 5.0};
  std::size_t q = 16;
  std::size_t p = 32;
  std::vector<std::size_t> p_sweep{8, 16, 32, 64};
  // Share of records used to train in the recovery sweep; the rest is held out.
  double train_fraction = 0.8;
  std::vector<double> sigmas{0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0};
  std::vector<std::size_t> tasks{0, 1, 2};
  std::vector<std::size_t> ns{10, 50, 100};
  attack::AttackConfig attack;
  metric::RetrievalConfig retrieval;
};

// Unknown keys and invalid values raise ConfigError. `corpus.preset`
// ("standard" or "overlap") picks the base corpus before field overrides.
ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every effective field, so the manifest hash covers defaults too.
json to_json(const ExperimentConfig& config);
// Field overrides on top of `base` (or on a named preset).
CorpusConfig parse_corpus_config(const json& j, CorpusConfig base);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CommandResult {
  std::vector<Check> checks;
  std::filesystem::path out_dir;

  bool ok() const;
};

std::string config_hash(const json& config);

// Writes manifest.json listing every file of the bundle with its SHA-256.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command, const json& config,
                    const std::vector<std::string>& files);

CommandResult cmd_corpus_gen(const ExperimentConfig& config, const std::filesystem::path& out_dir);
CommandResult cmd_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);
CommandResult cmd_recovery_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);
CommandResult cmd_attack_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);
CommandResult cmd_retrieval_eval(const ExperimentConfig& config, const std::filesystem::path& out_dir);

// Scenario script (JSON):
//   { "seed": u64, "faults": {"drop_rate", "duplicate_rate", "reorder"},
//     "corpus": {...CorpusConfig overrides}, "encoder": {"q", "p", "epochs"},
//     "providers": ["alice", ...], "consumers": [{"name", "budget"}, ...],
//     "actions": [{"t": <time>, "do": <action>, ...}, ...] }
// Actions run in ascending t (stable for equal t):
//   list {provider, record, sigma, price}     purchase {consumer, listing}
//   run {max_steps}                           download {consumer, listing, expect: ok|refused}
//   tamper {block, offset}                    verify {expect: ok|invalid}
//   replay_handshake {}                       flow {consumer, cohort, budget, n, min_from_cohort}
//   expect_sessions {state, count}
// After the last action the world is run to quiescence and the invariant
// report is appended: no confinement violations at any step, delivered
// records equal the listed originals, ledger verification matches what the
// script expects.
CommandResult cmd_vend_scenario(const std::filesystem::path& script, const std::filesystem::path& out_dir,
                                std::optional<std::uint64_t> seed = std::nullopt);
CommandResult run_scenario(const json& script, const std::filesystem::path& out_dir,
                           std::optional<std::uint64_t> seed = std::nullopt);

// Recomputes file hashes and the config hash recorded in manifest.json.
CommandResult cmd_verify(const std::filesystem::path& bundle_dir);

}  // namespace ddv::cli
