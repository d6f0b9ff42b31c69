#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "ddv/error.hpp"

namespace {

using namespace ddv::cli;

// Exit codes: 0 all checks passed, 1 an invariant check failed, 2 bad
// configuration or input, 3 any other error.
int report(const CommandResult& r) {
  for (const auto& c : r.checks)
    std::cout << (c.passed ? "PASS  " : "FAIL  ") << c.name << (c.detail.empty() ? "" : "  [" + c.detail + "]") << '\n';
  std::cout << (r.ok() ? "ok" : "FAILED") << "  " << r.out_dir.string() << '\n';
  return r.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddv: data vending toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_option("--out", out_dir, "output directory");
  };
  auto config = [&] {
    auto c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) c.seed = *seed;
    return c;
  };

  std::function<int()> action;

  auto* corpus = app.add_subcommand("corpus", "corpus commands")->require_subcommand(1);
  auto* gen = corpus->add_subcommand("gen", "generate a corpus file");
  common(gen);
  gen->callback([&] { action = [&] { return report(cmd_corpus_gen(config(), out_dir)); }; });

  auto* train = app.add_subcommand("train", "train the visit and patient autoencoders");
  common(train);
  train->callback([&] { action = [&] { return report(cmd_train(config(), out_dir)); }; });

  auto* sweep = app.add_subcommand("sweep", "run an experiment sweep");
  std::string kind;
  sweep->add_option("kind", kind, "recovery | attack | retrieval")
      ->required()
      ->check(CLI::IsMember({"recovery", "attack", "retrieval"}));
  common(sweep);
  sweep->callback([&] {
    action = [&] {
      const auto c = config();
      if (kind == "recovery") return report(cmd_recovery_sweep(c, out_dir));
      if (kind == "attack") return report(cmd_attack_sweep(c, out_dir));
      return report(cmd_retrieval_eval(c, out_dir));
    };
  });

  auto* vend = app.add_subcommand("vend", "protocol scenarios")->require_subcommand(1);
  auto* run = vend->add_subcommand("run", "replay a scenario script");
  std::string script;
  run->add_option("script", script, "scenario script (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "overrides the script seed");
  run->add_option("--out", out_dir, "output directory");
  run->callback([&] { action = [&] { return report(cmd_vend_scenario(script, out_dir, seed)); }; });

  auto* verify = app.add_subcommand("verify", "check a report bundle against its manifest");
  std::string bundle;
  verify->add_option("bundle", bundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
  verify->callback([&] { action = [&] { return report(cmd_verify(bundle)); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    return action ? action() : 0;
  } catch (const ddv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ddv::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
