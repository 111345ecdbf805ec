#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "arise/orchestrator.hpp"

namespace arise::harness {

/// arise, arise_no_adaptive, arise_no_swarm, arise_no_novelty,
/// arise_no_broadcast, ppo.
const std::vector<std::string>& known_variants();

struct ExperimentConfig {
  std::vector<std::string> envs;
  std::vector<std::string> variants{"arise"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  AriseConfig arise;
  PPOConfig ppo;
  std::filesystem::path out = "runs";
  bool checkpoints = true;
  int checkpoint_interval = 0;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Sets one dotted key from its textual value. Unknown keys, malformed
/// values and out-of-range values raise ConfigError with the key path.
void set_key(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Flat `key = value` lines; `#` starts a comment. Later lines win.
ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {});
ExperimentConfig parse_config_file(const std::filesystem::path& path, ExperimentConfig base = {});

/// The per-run configuration: ablation flags for `variant` applied on top of
/// the shared settings, with the run seed.
AriseConfig resolve_run_config(const ExperimentConfig& config, const std::string& variant, std::uint64_t seed);

/// `<variant>__<env>__seed<k>` with the env id reduced to [A-Za-z0-9._-].
std::string run_name(const std::string& variant, const std::string& env, std::uint64_t seed);

// ---- metrics CSV ---------------------------------------------------------------

const std::string& csv_header();
/// Shortest round-trip decimal; NaN becomes an empty field.
std::string format_number(double x);
double parse_number(const std::string& field);
std::string csv_row(const MetricsRow& row);
MetricsRow parse_csv_row(const std::string& line);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// ---- summaries -------------------------------------------------------------------

struct GroupSummary {
  std::string variant;
  std::string env;
  std::map<std::uint64_t, double> final_returns;        // by seed
  std::map<std::uint64_t, double> convergence_episodes;  // by seed; NaN if never evaluated
  double final_mean = 0.0;
  double final_std = 0.0;  // population std
  double convergence_mean = 0.0;
  double convergence_std = 0.0;
};

struct PairDelta {
  std::string env;
  std::string a;
  std::string b;
  double delta = 0.0;  // final_mean(a) - final_mean(b)
};

struct BaselineComparison {
  std::string env;
  std::string variant;
  int wins = 0;  // seeds where the variant's final return beats ppo's
  int losses = 0;
  int ties = 0;
};

struct SummaryReport {
  std::vector<GroupSummary> groups;
  std::vector<PairDelta> deltas;
  std::vector<BaselineComparison> versus_baseline;
};

/// Final evaluation return (last evaluated row) and episodes to the first
/// evaluation within 10% of the run's best, taken from one run's rows.
double final_eval_return(const std::vector<MetricsRow>& rows);
double convergence_episodes(const std::vector<MetricsRow>& rows);

/// Throws UndefinedMetric when `runs` is empty.
SummaryReport summarize_runs(const std::vector<std::vector<MetricsRow>>& runs);
/// Reads `<dir>/metrics/*.csv`, writes summary.json and summary.txt into dir.
SummaryReport summarize(const std::filesystem::path& dir);

std::string summary_json(const SummaryReport& report);
std::string summary_table(const SummaryReport& report);

// ---- grid ------------------------------------------------------------------------

struct RunOutcome {
  std::string name;
  std::string variant;
  std::string env;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunReport report;
};

struct GridResult {
  std::vector<RunOutcome> runs;  // in (variant, env, seed) order
  SummaryReport summary;         // empty when every run failed
};

/// Worker count from ARISE_WORKERS, else the hardware concurrency.
int default_workers();

/// Runs every (variant, env, seed) combination on a worker pool. Writes
/// metrics/<name>.csv, episodes/<name>.csv, checkpoints/<name>/ and, after
/// all runs, failures.json plus the summary files.
GridResult run_grid(const ExperimentConfig& config, int workers = 0);

}  // namespace arise::harness
