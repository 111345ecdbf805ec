#include "arise/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace arise::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::vector<std::string> split_list(const std::string& key, const std::string& value) {
  std::vector<std::string> out;
  for (const auto& p : split(value, ',')) {
    const std::string t = trim(p);
    if (t.empty()) throw ConfigError(key, "empty list element");
    out.push_back(t);
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

template <typename T>
T parse_int(const std::string& key, const std::string& value) {
  const std::string t = trim(value);
  T out{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(key, "expected an integer, got '" + value + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  const std::string t = trim(value);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty() || !std::isfinite(out)) {
    throw ConfigError(key, "expected a finite number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string t = trim(value);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + value + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter int_field(T AriseConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
    c.arise.*field = parse_int<T>(k, v);
  };
}
Setter real_field(double AriseConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.arise.*field = parse_real(k, v); };
}
Setter bool_field(bool AriseConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.arise.*field = parse_bool(k, v); };
}
Setter ppo_real(double PPOConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.ppo.*field = parse_real(k, v); };
}
Setter ppo_int(int PPOConfig::*field) {
  return [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.ppo.*field = parse_int<int>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"env", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.envs = split_list(k, v); }},
      {"variant", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.variants = split_list(k, v); }},
      {"seeds",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split_list(k, v)) c.seeds.push_back(parse_int<std::uint64_t>(k, s));
       }},
      {"out", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = trim(v); }},
      {"arise.num_agents", int_field(&AriseConfig::num_agents)},
      {"arise.alpha", real_field(&AriseConfig::alpha)},
      {"arise.beta", real_field(&AriseConfig::beta)},
      {"arise.horizon", int_field(&AriseConfig::horizon)},
      {"arise.total_iterations", int_field(&AriseConfig::total_iterations)},
      {"arise.max_episodes", int_field(&AriseConfig::max_episodes)},
      {"arise.selection",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         const auto parts = split_list(k, v);
         if (parts.size() != 3) throw ConfigError(k, "expected three probabilities: best, second, uniform");
         for (std::size_t i = 0; i < 3; ++i) c.arise.selection_probs[i] = parse_real(k, parts[i]);
       }},
      {"arise.no_swarm", bool_field(&AriseConfig::no_swarm)},
      {"arise.no_adaptive", bool_field(&AriseConfig::no_adaptive)},
      {"arise.no_novelty", bool_field(&AriseConfig::no_novelty)},
      {"arise.no_broadcast", bool_field(&AriseConfig::no_broadcast)},
      {"arise.broadcast_interval", int_field(&AriseConfig::broadcast_interval)},
      {"arise.hidden",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.arise.hidden.clear();
         for (const auto& s : split_list(k, v)) c.arise.hidden.push_back(parse_int<int>(k, s));
       }},
      {"arise.w_start", real_field(&AriseConfig::w_start)},
      {"arise.w_end", real_field(&AriseConfig::w_end)},
      {"arise.c1", real_field(&AriseConfig::c1)},
      {"arise.c2", real_field(&AriseConfig::c2)},
      {"arise.adapt_delta", real_field(&AriseConfig::adapt_delta)},
      {"arise.c_min", real_field(&AriseConfig::c_min)},
      {"arise.c_max", real_field(&AriseConfig::c_max)},
      {"arise.var_high_factor", real_field(&AriseConfig::var_high_factor)},
      {"arise.var_low_factor", real_field(&AriseConfig::var_low_factor)},
      {"arise.median_decay", real_field(&AriseConfig::median_decay)},
      {"ppo.clip_epsilon", ppo_real(&PPOConfig::clip_epsilon)},
      {"ppo.entropy_coef", ppo_real(&PPOConfig::entropy_coef)},
      {"ppo.value_coef", ppo_real(&PPOConfig::value_coef)},
      {"ppo.gamma", ppo_real(&PPOConfig::gamma)},
      {"ppo.lambda", ppo_real(&PPOConfig::lambda)},
      {"ppo.epochs", ppo_int(&PPOConfig::epochs)},
      {"ppo.batch_size", ppo_int(&PPOConfig::batch_size)},
      {"ppo.learning_rate", ppo_real(&PPOConfig::learning_rate)},
      {"ppo.max_grad_norm", ppo_real(&PPOConfig::max_grad_norm)},
      {"eval.interval", int_field(&AriseConfig::eval_interval)},
      {"eval.episodes", int_field(&AriseConfig::eval_episodes)},
      {"log.wall_time", bool_field(&AriseConfig::record_wall_time)},
      {"checkpoint.enabled",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.checkpoints = parse_bool(k, v); }},
      {"checkpoint.interval",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.checkpoint_interval = parse_int<int>(k, v);
       }},
  };
  return table;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '.' || ch == '_';
    out.push_back(keep ? ch : '_');
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
    if (!out) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::pair<double, double> mean_pstd(const std::vector<double>& v) {
  if (v.empty()) return {kNaN, kNaN};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

nlohmann::json json_number(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> v = {"arise",           "arise_no_adaptive",  "arise_no_swarm",
                                             "arise_no_novelty", "arise_no_broadcast", "ppo"};
  return v;
}

void ExperimentConfig::validate() const {
  if (envs.empty()) throw ConfigError("env", "required");
  for (const auto& e : envs) envs::validate_env_id(e);
  if (variants.empty()) throw ConfigError("variant", "required");
  for (const auto& v : variants) {
    const auto& known = known_variants();
    if (std::find(known.begin(), known.end(), v) == known.end()) {
      throw ConfigError("variant", "unknown variant '" + v + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "duplicate seed");
  }
  if (out.empty()) throw ConfigError("out", "required");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint.interval", "must be >= 0");
  ppo.validate();
  // The shared block must be valid under every requested variant.
  for (const auto& v : variants) resolve_run_config(*this, v, seeds.front()).validate();
}

void set_key(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown key");
  it->second(config, key, value);
}

ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "missing key");
    set_key(base, key, trim(line.substr(eq + 1)));
  }
  return base;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

AriseConfig resolve_run_config(const ExperimentConfig& config, const std::string& variant, std::uint64_t seed) {
  AriseConfig c = config.arise;
  c.seed = seed;
  if (variant == "arise") {
  } else if (variant == "arise_no_adaptive") {
    c.no_adaptive = true;
  } else if (variant == "arise_no_novelty") {
    c.no_novelty = true;
  } else if (variant == "arise_no_broadcast") {
    c.no_broadcast = true;
  } else if (variant == "arise_no_swarm") {
    c.no_swarm = true;
    c.num_agents = 1;
    c.alpha = 0.0;
    c.beta = 0.0;
  } else if (variant == "ppo") {
    c.no_swarm = true;
    c.no_adaptive = true;
    c.no_novelty = true;
    c.no_broadcast = true;
    c.num_agents = 1;
    c.alpha = 0.0;
    c.beta = 0.0;
  } else {
    throw ConfigError("variant", "unknown variant '" + variant + "'");
  }
  return c;
}

std::string run_name(const std::string& variant, const std::string& env, std::uint64_t seed) {
  return variant + "__" + sanitize(env) + "__seed" + std::to_string(seed);
}

// ---- CSV ---------------------------------------------------------------------------

const std::string& csv_header() {
  static const std::string h =
      "run_id,seed,variant,env,iteration,episodes_done,mean_return_raw,mean_return_aug,eval_return,fitness,"
      "var_reward,diversity,w,c1,c2,mean_entropy,policy_loss,value_loss,wall_ms";
  return h;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw Error("format_number: conversion failed");
  return std::string(buf, ptr);
}

double parse_number(const std::string& field) {
  if (field.empty()) return kNaN;
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ConfigError("csv", "bad number '" + field + "'");
  }
  return x;
}

std::string csv_row(const MetricsRow& r) {
  std::string fitness;
  for (std::size_t i = 0; i < r.fitness.size(); ++i) {
    if (i) fitness += ';';
    fitness += format_number(r.fitness[i]);
  }
  std::string out;
  out += r.run_id + ',' + std::to_string(r.seed) + ',' + r.variant + ',' + r.env + ',';
  out += std::to_string(r.iteration) + ',' + std::to_string(r.episodes_done) + ',';
  for (double x : {r.mean_return_raw, r.mean_return_aug, r.eval_return}) out += format_number(x) + ',';
  out += fitness + ',';
  for (double x : {r.var_reward, r.diversity, r.w, r.c1, r.c2, r.mean_entropy, r.policy_loss, r.value_loss}) {
    out += format_number(x) + ',';
  }
  out += format_number(r.wall_ms);
  return out;
}

MetricsRow parse_csv_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 19) throw ConfigError("csv", "expected 19 fields, got " + std::to_string(f.size()));
  MetricsRow r;
  r.run_id = f[0];
  r.seed = parse_int<std::uint64_t>("csv.seed", f[1]);
  r.variant = f[2];
  r.env = f[3];
  r.iteration = parse_int<int>("csv.iteration", f[4]);
  r.episodes_done = parse_int<std::int64_t>("csv.episodes_done", f[5]);
  r.mean_return_raw = parse_number(f[6]);
  r.mean_return_aug = parse_number(f[7]);
  r.eval_return = parse_number(f[8]);
  if (!f[9].empty()) {
    for (const auto& x : split(f[9], ';')) r.fitness.push_back(parse_number(x));
  }
  r.var_reward = parse_number(f[10]);
  r.diversity = parse_number(f[11]);
  r.w = parse_number(f[12]);
  r.c1 = parse_number(f[13]);
  r.c2 = parse_number(f[14]);
  r.mean_entropy = parse_number(f[15]);
  r.policy_loss = parse_number(f[16]);
  r.value_loss = parse_number(f[17]);
  r.wall_ms = parse_number(f[18]);
  return r;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::string content = csv_header() + '\n';
  for (const auto& r : rows) content += csv_row(r) + '\n';
  write_file_atomic(path, content);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv", "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) {
    throw ConfigError("csv", "unexpected header in " + path.string());
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_csv_row(line));
  }
  return rows;
}

// ---- summaries ---------------------------------------------------------------------

double final_eval_return(const std::vector<MetricsRow>& rows) {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (!std::isnan(it->eval_return)) return it->eval_return;
  }
  return kNaN;
}

double convergence_episodes(const std::vector<MetricsRow>& rows) {
  std::vector<EvalRecord> evals;
  for (const auto& r : rows) {
    if (!std::isnan(r.eval_return)) evals.push_back(EvalRecord{r.iteration, r.episodes_done, r.eval_return});
  }
  const int idx = convergence_index(evals);
  return idx < 0 ? kNaN : static_cast<double>(evals[static_cast<std::size_t>(idx)].episodes_done);
}

SummaryReport summarize_runs(const std::vector<std::vector<MetricsRow>>& runs) {
  std::map<std::pair<std::string, std::string>, GroupSummary> groups;  // (env, variant)
  for (const auto& rows : runs) {
    if (rows.empty()) continue;
    const MetricsRow& first = rows.front();
    GroupSummary& g = groups[{first.env, first.variant}];
    g.env = first.env;
    g.variant = first.variant;
    const double fin = final_eval_return(rows);
    if (std::isnan(fin)) continue;
    g.final_returns[first.seed] = fin;
    g.convergence_episodes[first.seed] = convergence_episodes(rows);
  }
  std::erase_if(groups, [](const auto& kv) { return kv.second.final_returns.empty(); });
  if (groups.empty()) throw UndefinedMetric("summarize: no completed runs");

  SummaryReport report;
  for (auto& [key, g] : groups) {
    std::vector<double> fin, conv;
    for (const auto& [seed, x] : g.final_returns) fin.push_back(x);
    for (const auto& [seed, x] : g.convergence_episodes) {
      if (!std::isnan(x)) conv.push_back(x);
    }
    std::tie(g.final_mean, g.final_std) = mean_pstd(fin);
    std::tie(g.convergence_mean, g.convergence_std) = mean_pstd(conv);
    report.groups.push_back(g);
  }
  for (const auto& a : report.groups) {
    for (const auto& b : report.groups) {
      if (a.env != b.env || a.variant == b.variant) continue;
      report.deltas.push_back(PairDelta{a.env, a.variant, b.variant, a.final_mean - b.final_mean});
    }
  }
  for (const auto& base : report.groups) {
    if (base.variant != "ppo") continue;
    for (const auto& g : report.groups) {
      if (g.env != base.env || g.variant == "ppo") continue;
      BaselineComparison cmp{g.env, g.variant};
      for (const auto& [seed, x] : g.final_returns) {
        const auto it = base.final_returns.find(seed);
        if (it == base.final_returns.end()) continue;
        if (x > it->second) {
          ++cmp.wins;
        } else if (x < it->second) {
          ++cmp.losses;
        } else {
          ++cmp.ties;
        }
      }
      report.versus_baseline.push_back(cmp);
    }
  }
  return report;
}

std::string summary_json(const SummaryReport& report) {
  nlohmann::json j;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : report.groups) {
    nlohmann::json finals = nlohmann::json::object();
    nlohmann::json conv = nlohmann::json::object();
    for (const auto& [seed, x] : g.final_returns) finals[std::to_string(seed)] = json_number(x);
    for (const auto& [seed, x] : g.convergence_episodes) conv[std::to_string(seed)] = json_number(x);
    j["groups"].push_back({{"env", g.env},
                           {"variant", g.variant},
                           {"runs", g.final_returns.size()},
                           {"final_return_mean", json_number(g.final_mean)},
                           {"final_return_std", json_number(g.final_std)},
                           {"convergence_episodes_mean", json_number(g.convergence_mean)},
                           {"convergence_episodes_std", json_number(g.convergence_std)},
                           {"final_return_by_seed", finals},
                           {"convergence_episodes_by_seed", conv}});
  }
  j["deltas"] = nlohmann::json::array();
  for (const auto& d : report.deltas) {
    j["deltas"].push_back({{"env", d.env}, {"a", d.a}, {"b", d.b}, {"delta", json_number(d.delta)}});
  }
  j["versus_ppo"] = nlohmann::json::array();
  for (const auto& c : report.versus_baseline) {
    j["versus_ppo"].push_back(
        {{"env", c.env}, {"variant", c.variant}, {"wins", c.wins}, {"losses", c.losses}, {"ties", c.ties}});
  }
  return j.dump(2) + '\n';
}

std::string summary_table(const SummaryReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %-20s %5s %22s %22s\n", "env", "variant", "runs", "final return",
                "episodes to 90% max");
  out << line;
  for (const auto& g : report.groups) {
    char fin[64], conv[64];
    std::snprintf(fin, sizeof fin, "%.2f +- %.2f", g.final_mean, g.final_std);
    if (std::isnan(g.convergence_mean)) {
      std::snprintf(conv, sizeof conv, "n/a");
    } else {
      std::snprintf(conv, sizeof conv, "%.1f +- %.1f", g.convergence_mean, g.convergence_std);
    }
    std::snprintf(line, sizeof line, "%-32s %-20s %5zu %22s %22s\n", g.env.c_str(), g.variant.c_str(),
                  g.final_returns.size(), fin, conv);
    out << line;
  }
  if (!report.versus_baseline.empty()) {
    out << "\nversus ppo (wins/losses/ties by seed)\n";
    for (const auto& c : report.versus_baseline) {
      std::snprintf(line, sizeof line, "%-32s %-20s %d/%d/%d\n", c.env.c_str(), c.variant.c_str(), c.wins, c.losses,
                    c.ties);
      out << line;
    }
  }
  return out.str();
}

SummaryReport summarize(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path metrics = dir / "metrics";
  std::vector<fs::path> files;
  if (fs::is_directory(metrics)) {
    for (const auto& entry : fs::directory_iterator(metrics)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<std::vector<MetricsRow>> runs;
  for (const auto& f : files) runs.push_back(read_metrics_csv(f));
  if (runs.empty()) throw UndefinedMetric("summarize: no metrics CSVs under " + metrics.string());
  SummaryReport report = summarize_runs(runs);
  write_file_atomic(dir / "summary.json", summary_json(report));
  write_file_atomic(dir / "summary.txt", summary_table(report));
  return report;
}

// ---- grid ----------------------------------------------------------------------------

int default_workers() {
  if (const char* env = std::getenv("ARISE_WORKERS")) {
    try {
      const int n = parse_int<int>("ARISE_WORKERS", env);
      if (n >= 1) return n;
    } catch (const ConfigError&) {
    }
    spdlog::warn("ignoring invalid ARISE_WORKERS='{}'", env);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

GridResult run_grid(const ExperimentConfig& config, int workers) {
  config.validate();
  namespace fs = std::filesystem;
  GridResult result;
  for (const auto& variant : config.variants) {
    for (const auto& env : config.envs) {
      for (std::uint64_t seed : config.seeds) {
        RunOutcome o;
        o.name = run_name(variant, env, seed);
        o.variant = variant;
        o.env = env;
        o.seed = seed;
        result.runs.push_back(std::move(o));
      }
    }
  }
  fs::create_directories(config.out / "metrics");
  fs::create_directories(config.out / "episodes");

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < result.runs.size(); i = next++) {
      RunOutcome& o = result.runs[i];
      try {
        const AriseConfig rc = resolve_run_config(config, o.variant, o.seed);
        RunOptions options;
        if (config.checkpoints) {
          options.checkpoint_dir = config.out / "checkpoints" / o.name;
          options.checkpoint_interval = config.checkpoint_interval;
        }
        o.report = run_training(rc, config.ppo, o.env, RunInfo{o.name, o.variant}, options);
        write_metrics_csv(config.out / "metrics" / (o.name + ".csv"), o.report.rows);
        std::string ep = "episode,agent,raw_return,aug_return,length\n";
        for (const auto& e : o.report.episodes) {
          ep += std::to_string(e.episode) + ',' + std::to_string(e.agent) + ',' + format_number(e.raw_return) + ',' +
                format_number(e.aug_return) + ',' + std::to_string(e.length) + '\n';
        }
        write_file_atomic(config.out / "episodes" / (o.name + ".csv"), ep);
        o.ok = true;
        spdlog::info("{}: final eval return {}", o.name, format_number(o.report.final_eval_return));
      } catch (const std::exception& e) {
        o.ok = false;
        o.error = e.what();
        spdlog::warn("{}: run failed and is excluded from the summary: {}", o.name, e.what());
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers > 0 ? workers : default_workers(),
                                          static_cast<int>(result.runs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  nlohmann::json failures = nlohmann::json::array();
  for (const auto& o : result.runs) {
    if (!o.ok) failures.push_back({{"run", o.name}, {"error", o.error}});
  }
  write_file_atomic(config.out / "failures.json", failures.dump(2) + '\n');

  const bool any_ok = std::any_of(result.runs.begin(), result.runs.end(), [](const auto& o) { return o.ok; });
  if (any_ok) result.summary = summarize(config.out);
  return result;
}

}  // namespace arise::harness
