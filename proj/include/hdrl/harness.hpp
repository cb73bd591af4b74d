#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hdrl/baselines.hpp"
#include "hdrl/env.hpp"
#include "hdrl/ppo.hpp"

// Seeded end-to-end experiment runner: configuration loading with defaults,
// agent wiring per allocation scheme, the training loop, CSV metrics and
// timing output, checkpoints, and small analysis utilities.
namespace hdrl::harness {

struct ExperimentConfig {
  env::SystemConfig system;

  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int rp_batch = 30;  // E
  int op_batch = 30;  // T_s
  double lr_rp_actor = 1e-4;
  double lr_rp_critic = 1e-4;
  double lr_op_actor = 2e-4;
  double lr_op_critic = 2e-4;
  double entropy_coef = 0.0;
  bool normalize_advantages = false;
  int update_epochs = 1;

  int hidden_width = 500;
  int lstm_width = 500;

  std::string algorithm = "hppo";  // hppo | shppo
  baselines::AllocatorKind allocator = baselines::AllocatorKind::LearnedHppo;
  int episodes = 3000;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "out";

  ppo::HyperParams rp_hyper() const;
  ppo::HyperParams op_hyper() const;
  void validate() const;
};

// Scenario and training defaults for the full-scale setting.
ExperimentConfig default_config();

// Small scenario for fast runs: S=2, L=2, J_s=1, K_s=2, N=2, M_l=4 and
// narrow networks.
void apply_desk_preset(ExperimentConfig& config);
void apply_preset(ExperimentConfig& config, const std::string& name);

// Flat `key = value` file, '#' comments, empty file allowed. Unknown keys are
// rejected; absent keys keep the values of `base`.
ExperimentConfig load_config(const std::string& path,
                             ExperimentConfig base = ExperimentConfig{});
ExperimentConfig parse_config(std::istream& in,
                              ExperimentConfig base = ExperimentConfig{});
void save_config(const ExperimentConfig& config, const std::string& path);

struct MetricsRecord {
  int episode = 0;
  std::vector<double> op_mean_rate;
  double reward = 0.0;
  std::int64_t goal = -1;
  double rp_actor_loss = 0.0;
  double rp_critic_loss = 0.0;
  double rp_ratio_mean = 1.0;
  std::vector<double> op_actor_loss;
  std::vector<double> op_critic_loss;
  // Wall-clock fields live in the timing file, not the metrics file, so that
  // metrics stay byte-identical across repeated runs.
  double rp_update_ms = 0.0;
  double op_update_ms = 0.0;
  double episode_ms = 0.0;
  double cumulative_s = 0.0;
};

struct RunResult {
  std::vector<MetricsRecord> records;
  std::string metrics_path;
  std::string timing_path;
  env::Topology topology;
  std::vector<std::unique_ptr<ppo::OpAgent>> op_agents;
  std::unique_ptr<ppo::RpAgentBase> rp_agent;  // null for heuristic schemes
  std::unique_ptr<baselines::CentralizedAgent> centralized;
};

// Runs the full two-level loop (or a baseline substitution) for the episode
// budget. Outputs metrics_<seed>.csv, timing_<seed>.csv, config_resolved.cfg
// and checkpoints under config.out_dir. Identical (config, seed) pairs give
// byte-identical metrics files.
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

// Trailing moving average; the first window-1 entries average the available
// prefix.
std::vector<double> smooth_series(const std::vector<double>& values,
                                  int window = 100);

struct TimeProfile {
  double mean_seconds = 0.0;
  double variance = 0.0;
  int samples = 0;
};

// Mean/variance of wall time over `calls` invocations after `warmup` excluded
// warm-up calls.
TimeProfile time_profile(const std::function<void()>& fn, int calls,
                         int warmup = 10);

}  // namespace hdrl::harness
