// Command-line front end: train a grid of runs, summarize results, evaluate a
// checkpoint.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>

#include "arise/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ARISE: PPO agents coupled through a particle swarm"};
  app.require_subcommand(1);

  std::string config_path, env, variant, seeds, out;
  int workers = 0;
  auto* train = app.add_subcommand("train", "Run every (variant, env, seed) combination");
  train->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--env", env, "Environment id(s), comma separated");
  train->add_option("--variant", variant, "Variant(s), comma separated");
  train->add_option("--seeds", seeds, "Seeds, comma separated");
  train->add_option("--out", out, "Output directory");
  train->add_option("--workers", workers, "Parallel runs (default: ARISE_WORKERS or core count)");
  std::vector<std::string> overrides;
  train->add_option("--set", overrides, "Extra key=value overrides");

  std::string in_dir;
  auto* summarize = app.add_subcommand("summarize", "Aggregate metrics CSVs into summary files");
  summarize->add_option("--in", in_dir, "Output directory of a train run")->required();

  std::string checkpoint;
  int episodes = 10;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint's best agent");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory or its manifest.json")->required();
  eval->add_option("--episodes", episodes, "Episodes to average over");
  eval->add_option("--seed", eval_seed, "Evaluation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      arise::harness::ExperimentConfig config;
      if (!config_path.empty()) config = arise::harness::parse_config_file(config_path);
      if (!env.empty()) arise::harness::set_key(config, "env", env);
      if (!variant.empty()) arise::harness::set_key(config, "variant", variant);
      if (!seeds.empty()) arise::harness::set_key(config, "seeds", seeds);
      if (!out.empty()) arise::harness::set_key(config, "out", out);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw arise::ConfigError(kv, "expected key=value");
        arise::harness::set_key(config, kv.substr(0, eq), kv.substr(eq + 1));
      }
      config.validate();
      const auto result = arise::harness::run_grid(config, workers);
      int failed = 0;
      for (const auto& run : result.runs) failed += run.ok ? 0 : 1;
      if (failed == static_cast<int>(result.runs.size())) {
        spdlog::error("every run failed");
        return kExitRuntime;
      }
      std::cout << arise::harness::summary_table(result.summary);
      return failed > 0 ? kExitRuntime : kExitOk;
    }
    if (*summarize) {
      const auto report = arise::harness::summarize(in_dir);
      std::cout << arise::harness::summary_table(report);
      return kExitOk;
    }
    if (*eval) {
      const auto trainer = arise::Trainer::load_checkpoint(checkpoint);
      const double ret = trainer.evaluate(episodes, eval_seed);
      std::cout << "env " << trainer.env_id() << " iteration " << trainer.iteration() << " episodes "
                << trainer.episodes_done() << " mean_return " << arise::harness::format_number(ret) << "\n";
      return kExitOk;
    }
  } catch (const arise::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
