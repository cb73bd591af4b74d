#include "hdrl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hdrl::harness {

namespace fs = std::filesystem;

ppo::HyperParams ExperimentConfig::rp_hyper() const {
  ppo::HyperParams h;
  h.gamma = gamma;
  h.gae_lambda = gae_lambda;
  h.clip_eps = clip_eps;
  h.lr_actor = lr_rp_actor;
  h.lr_critic = lr_rp_critic;
  h.batch = rp_batch;
  h.entropy_coef = entropy_coef;
  h.normalize_advantages = normalize_advantages;
  h.update_epochs = update_epochs;
  return h;
}

ppo::HyperParams ExperimentConfig::op_hyper() const {
  ppo::HyperParams h = rp_hyper();
  h.lr_actor = lr_op_actor;
  h.lr_critic = lr_op_critic;
  h.batch = op_batch;
  return h;
}

void ExperimentConfig::validate() const {
  system.validate();
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma out of range");
  if (gae_lambda < 0.0 || gae_lambda > 1.0)
    throw std::invalid_argument("gae_lambda out of range");
  if (clip_eps <= 0.0) throw std::invalid_argument("clip_eps must be > 0");
  if (rp_batch < 1 || op_batch < 1)
    throw std::invalid_argument("batch sizes must be >= 1");
  if (lr_rp_actor <= 0.0 || lr_rp_critic <= 0.0 || lr_op_actor <= 0.0 ||
      lr_op_critic <= 0.0)
    throw std::invalid_argument("learning rates must be > 0");
  if (update_epochs < 1) throw std::invalid_argument("update_epochs must be >= 1");
  if (hidden_width < 1 || lstm_width < 1)
    throw std::invalid_argument("network widths must be >= 1");
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("at least one seed required");
  if (algorithm != "hppo" && algorithm != "shppo")
    throw std::invalid_argument("algorithm must be hppo or shppo");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

void apply_desk_preset(ExperimentConfig& config) {
  config.system.num_ops = 2;
  config.system.num_ris = 2;
  config.system.bs_per_op = 1;
  config.system.users_per_op = 2;
  config.system.num_antennas = 2;
  config.system.elements_per_ris = 4;
  config.hidden_width = 64;
  config.lstm_width = 64;
}

void apply_preset(ExperimentConfig& config, const std::string& name) {
  if (name == "desk") {
    apply_desk_preset(config);
  } else if (name != "paper") {
    throw std::invalid_argument("unknown preset: " + name);
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("invalid boolean: " + v);
}

std::vector<std::uint64_t> parse_seeds(const std::string& v) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw std::invalid_argument("empty seeds list");
  return seeds;
}

std::string format_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(seeds[i]);
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void assign_key(ExperimentConfig& c, const std::string& key,
                const std::string& value) {
  auto& sys = c.system;
  if (key == "num_ops") sys.num_ops = std::stoi(value);
  else if (key == "bs_per_op") sys.bs_per_op = std::stoi(value);
  else if (key == "users_per_op") sys.users_per_op = std::stoi(value);
  else if (key == "num_antennas") sys.num_antennas = std::stoi(value);
  else if (key == "num_ris") sys.num_ris = std::stoi(value);
  else if (key == "elements_per_ris") sys.elements_per_ris = std::stoi(value);
  else if (key == "rician_kappa") sys.rician_kappa = std::stod(value);
  else if (key == "tx_power_per_bs") sys.tx_power_per_bs = std::stod(value);
  else if (key == "steps_per_episode") sys.steps_per_episode = std::stoi(value);
  else if (key == "noise_power") sys.noise_power = std::stod(value);
  else if (key == "pathloss_ref_gain") sys.pathloss_ref_gain = std::stod(value);
  else if (key == "reference_distance") sys.reference_distance = std::stod(value);
  else if (key == "exp_bs_ris") sys.exp_bs_ris = std::stod(value);
  else if (key == "exp_ris_user") sys.exp_ris_user = std::stod(value);
  else if (key == "exp_bs_user") sys.exp_bs_user = std::stod(value);
  else if (key == "gamma") c.gamma = std::stod(value);
  else if (key == "gae_lambda") c.gae_lambda = std::stod(value);
  else if (key == "clip_eps") c.clip_eps = std::stod(value);
  else if (key == "rp_batch") c.rp_batch = std::stoi(value);
  else if (key == "op_batch") c.op_batch = std::stoi(value);
  else if (key == "lr_rp_actor") c.lr_rp_actor = std::stod(value);
  else if (key == "lr_rp_critic") c.lr_rp_critic = std::stod(value);
  else if (key == "lr_op_actor") c.lr_op_actor = std::stod(value);
  else if (key == "lr_op_critic") c.lr_op_critic = std::stod(value);
  else if (key == "entropy_coef") c.entropy_coef = std::stod(value);
  else if (key == "normalize_advantages")
    c.normalize_advantages = parse_bool(value);
  else if (key == "update_epochs") c.update_epochs = std::stoi(value);
  else if (key == "hidden_width") c.hidden_width = std::stoi(value);
  else if (key == "lstm_width") c.lstm_width = std::stoi(value);
  else if (key == "algorithm") c.algorithm = value;
  else if (key == "allocator")
    c.allocator = baselines::allocator_from_string(value);
  else if (key == "episodes") c.episodes = std::stoi(value);
  else if (key == "seeds") c.seeds = parse_seeds(value);
  else if (key == "out_dir") c.out_dir = value;
  else throw std::invalid_argument("unknown config key: " + key);
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  ExperimentConfig config = std::move(base);
  bool allocator_set = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config parse error at line " +
                                  std::to_string(line_no) + ": missing '='");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config parse error at line " +
                                  std::to_string(line_no));
    try {
      if (key == "allocator") allocator_set = true;
      assign_key(config, key, value);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("invalid value for " + key + ": " + value);
    }
  }
  // `algorithm` picks the learned provider flavor when the allocator was not
  // chosen explicitly; an explicit learned allocator wins and harmonizes.
  if (!allocator_set && config.algorithm == "shppo")
    config.allocator = baselines::AllocatorKind::LearnedShppo;
  if (config.allocator == baselines::AllocatorKind::LearnedHppo)
    config.algorithm = "hppo";
  if (config.allocator == baselines::AllocatorKind::LearnedShppo)
    config.algorithm = "shppo";
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  return parse_config(in, std::move(base));
}

void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  const auto& sys = c.system;
  out << "num_ops = " << sys.num_ops << "\n"
      << "bs_per_op = " << sys.bs_per_op << "\n"
      << "users_per_op = " << sys.users_per_op << "\n"
      << "num_antennas = " << sys.num_antennas << "\n"
      << "num_ris = " << sys.num_ris << "\n"
      << "elements_per_ris = " << sys.elements_per_ris << "\n"
      << "rician_kappa = " << num(sys.rician_kappa) << "\n"
      << "tx_power_per_bs = " << num(sys.tx_power_per_bs) << "\n"
      << "steps_per_episode = " << sys.steps_per_episode << "\n"
      << "noise_power = " << num(sys.noise_power) << "\n"
      << "pathloss_ref_gain = " << num(sys.pathloss_ref_gain) << "\n"
      << "reference_distance = " << num(sys.reference_distance) << "\n"
      << "exp_bs_ris = " << num(sys.exp_bs_ris) << "\n"
      << "exp_ris_user = " << num(sys.exp_ris_user) << "\n"
      << "exp_bs_user = " << num(sys.exp_bs_user) << "\n"
      << "gamma = " << num(c.gamma) << "\n"
      << "gae_lambda = " << num(c.gae_lambda) << "\n"
      << "clip_eps = " << num(c.clip_eps) << "\n"
      << "rp_batch = " << c.rp_batch << "\n"
      << "op_batch = " << c.op_batch << "\n"
      << "lr_rp_actor = " << num(c.lr_rp_actor) << "\n"
      << "lr_rp_critic = " << num(c.lr_rp_critic) << "\n"
      << "lr_op_actor = " << num(c.lr_op_actor) << "\n"
      << "lr_op_critic = " << num(c.lr_op_critic) << "\n"
      << "entropy_coef = " << num(c.entropy_coef) << "\n"
      << "normalize_advantages = " << (c.normalize_advantages ? "true" : "false")
      << "\n"
      << "update_epochs = " << c.update_epochs << "\n"
      << "hidden_width = " << c.hidden_width << "\n"
      << "lstm_width = " << c.lstm_width << "\n"
      << "algorithm = " << c.algorithm << "\n"
      << "allocator = " << baselines::to_string(c.allocator) << "\n"
      << "episodes = " << c.episodes << "\n"
      << "seeds = " << format_seeds(c.seeds) << "\n"
      << "out_dir = " << c.out_dir << "\n";
}

std::vector<double> smooth_series(const std::vector<double>& values,
                                  int window) {
  if (values.empty()) throw std::invalid_argument("smooth_series: empty input");
  if (window < 1) throw std::invalid_argument("smooth_series: window must be >= 1");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= static_cast<std::size_t>(window)) acc -= values[i - window];
    const std::size_t count = std::min<std::size_t>(i + 1, window);
    out[i] = acc / static_cast<double>(count);
  }
  return out;
}

TimeProfile time_profile(const std::function<void()>& fn, int calls,
                         int warmup) {
  if (calls <= 0)
    throw std::invalid_argument("time_profile: no samples after warm-up");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples(calls);
  for (int i = 0; i < calls; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    samples[i] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
  }
  TimeProfile profile;
  profile.samples = calls;
  for (const double s : samples) profile.mean_seconds += s;
  profile.mean_seconds /= calls;
  for (const double s : samples) {
    const double d = s - profile.mean_seconds;
    profile.variance += d * d;
  }
  profile.variance /= calls;
  return profile;
}

namespace {

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& records, int num_ops) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "episode,goal,reward";
  for (int s = 1; s <= num_ops; ++s) out << ",rate_op" << s;
  out << ",rp_actor_loss,rp_critic_loss,rp_ratio_mean";
  for (int s = 1; s <= num_ops; ++s)
    out << ",op" << s << "_actor_loss,op" << s << "_critic_loss";
  out << "\n";
  for (const MetricsRecord& r : records) {
    out << r.episode << "," << r.goal << "," << num(r.reward);
    for (const double rate : r.op_mean_rate) out << "," << num(rate);
    out << "," << num(r.rp_actor_loss) << "," << num(r.rp_critic_loss) << ","
        << num(r.rp_ratio_mean);
    for (int s = 0; s < num_ops; ++s)
      out << "," << num(r.op_actor_loss[s]) << "," << num(r.op_critic_loss[s]);
    out << "\n";
  }
}

void write_timing_csv(const std::string& path,
                      const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "episode,rp_update_ms,op_update_ms,episode_ms,cumulative_s\n";
  for (const MetricsRecord& r : records)
    out << r.episode << "," << num(r.rp_update_ms) << ","
        << num(r.op_update_ms) << "," << num(r.episode_ms) << ","
        << num(r.cumulative_s) << "\n";
}

void save_checkpoints(const ExperimentConfig& config, std::uint64_t seed,
                      RunResult& result) {
  const std::string tag = "_" + std::to_string(seed) + ".ckpt";
  const fs::path dir(config.out_dir);
  for (std::size_t s = 0; s < result.op_agents.size(); ++s) {
    const std::string prefix = "op" + std::to_string(s + 1);
    neural::save_params((dir / (prefix + "_actor" + tag)).string(),
                        result.op_agents[s]->actor_params());
    neural::save_params((dir / (prefix + "_critic" + tag)).string(),
                        result.op_agents[s]->critic_params());
  }
  if (result.rp_agent) {
    if (auto* hppo = dynamic_cast<ppo::RpAgentHppo*>(result.rp_agent.get())) {
      neural::save_params((dir / ("rp_actor" + tag)).string(),
                          hppo->actor_params());
      neural::save_params((dir / ("rp_critic" + tag)).string(),
                          hppo->critic_params());
    } else if (auto* seq = dynamic_cast<ppo::RpAgentSeq*>(result.rp_agent.get())) {
      neural::save_params((dir / ("rp_actor" + tag)).string(),
                          seq->actor_params());
      neural::save_params((dir / ("rp_critic" + tag)).string(),
                          seq->critic_params());
    } else if (auto* one =
                   dynamic_cast<baselines::RpAgent1d*>(result.rp_agent.get())) {
      neural::save_params((dir / ("rp_actor" + tag)).string(),
                          one->actor_params());
      neural::save_params((dir / ("rp_critic" + tag)).string(),
                          one->critic_params());
    }
  }
  if (result.centralized) {
    neural::save_params((dir / ("central_actor" + tag)).string(),
                        result.centralized->agent().actor_params());
    neural::save_params((dir / ("central_critic" + tag)).string(),
                        result.centralized->agent().critic_params());
  }
}

RunResult run_centralized(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  fs::create_directories(config.out_dir);
  save_config(config, (fs::path(config.out_dir) / "config_resolved.cfg").string());

  if (config.allocator == baselines::AllocatorKind::Centralized)
    return run_centralized(config, seed);

  using baselines::AllocatorKind;
  const env::SystemConfig& sys = config.system;
  const RngStream root(seed);
  RngStream topo_rng = root.child("topology");
  RngStream alloc_rng = root.child("allocator");

  RunResult result;
  result.topology = env::sample_topology(sys, topo_rng);

  smdp::EpisodeRunner runner(sys, result.topology, root.child("channels").seed());

  const int obs_dim = smdp::op_observation_width(sys);
  const int act_dim = smdp::op_action_dim(sys);
  std::vector<smdp::OpPolicyBase*> op_policies;
  for (int s = 0; s < sys.num_ops; ++s) {
    result.op_agents.push_back(std::make_unique<ppo::OpAgent>(
        obs_dim, act_dim, config.hidden_width, config.op_hyper(),
        root.child("op-agent-" + std::to_string(s + 1))));
    op_policies.push_back(result.op_agents.back().get());
  }

  const int state_width = smdp::rp_state_width(sys);
  std::unique_ptr<baselines::FixedRpPolicy> fixed;
  smdp::RpPolicyBase* rp_policy = nullptr;
  switch (config.allocator) {
    case AllocatorKind::LearnedHppo:
      result.rp_agent = std::make_unique<ppo::RpAgentHppo>(
          state_width, sys.num_ops, sys.num_ris, config.lstm_width,
          config.hidden_width, config.rp_hyper(), root.child("rp-agent"));
      rp_policy = result.rp_agent.get();
      break;
    case AllocatorKind::LearnedShppo:
      result.rp_agent = std::make_unique<ppo::RpAgentSeq>(
          state_width, sys.num_ops, sys.num_ris, config.lstm_width,
          config.hidden_width, config.rp_hyper(), root.child("rp-agent"));
      rp_policy = result.rp_agent.get();
      break;
    case AllocatorKind::Learned1d:
      result.rp_agent = std::make_unique<baselines::RpAgent1d>(
          state_width, sys.num_ops, sys.num_ris, config.lstm_width,
          config.hidden_width, config.rp_hyper(), root.child("rp-agent"));
      rp_policy = result.rp_agent.get();
      break;
    default:
      fixed = std::make_unique<baselines::FixedRpPolicy>(sys.num_ops, sys.num_ris);
      rp_policy = fixed.get();
      break;
  }

  const bool needs_record = config.allocator == AllocatorKind::Greedy ||
                            config.allocator == AllocatorKind::Auction ||
                            config.allocator == AllocatorKind::ExhaustiveOracle;
  runner.set_record_steps(needs_record);
  if (config.allocator == AllocatorKind::None) runner.set_zero_reflection(true);

  const std::string metrics_path =
      (fs::path(config.out_dir) / ("metrics_" + std::to_string(seed) + ".csv"))
          .string();
  const std::string timing_path =
      (fs::path(config.out_dir) / ("timing_" + std::to_string(seed) + ".csv"))
          .string();
  result.metrics_path = metrics_path;
  result.timing_path = timing_path;

  smdp::EpisodeRecord previous;
  bool has_previous = false;
  const auto run_start = std::chrono::steady_clock::now();

  try {
    for (int e = 0; e < config.episodes; ++e) {
      const auto episode_start = std::chrono::steady_clock::now();

      switch (config.allocator) {
        case AllocatorKind::Random:
          fixed->set_allocation(
              baselines::allocate_random(sys.num_ops, sys.num_ris, alloc_rng));
          break;
        case AllocatorKind::Distance:
          fixed->set_allocation(baselines::allocate_distance(result.topology));
          break;
        case AllocatorKind::Greedy:
          if (has_previous)
            fixed->set_allocation(baselines::allocate_greedy(
                baselines::standalone_rate_table(previous, sys)));
          break;
        case AllocatorKind::Auction:
          if (has_previous)
            fixed->set_allocation(baselines::allocate_auction(
                baselines::bid_table(previous, sys)));
          break;
        case AllocatorKind::ExhaustiveOracle:
          if (has_previous) {
            const std::int64_t space = smdp::goal_space(sys.num_ops, sys.num_ris);
            if (space > 4096)
              throw std::invalid_argument(
                  "exhaustive-oracle allocator: goal space exceeds 4096");
            std::int64_t best_goal = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::int64_t g = 0; g < space; ++g) {
              const env::RisAllocation cand =
                  smdp::decode_goal(g, sys.num_ops, sys.num_ris);
              const double value =
                  baselines::reevaluate_mean_rates(previous, sys, cand).sum();
              if (value > best) {
                best = value;
                best_goal = g;
              }
            }
            fixed->set_allocation(
                smdp::decode_goal(best_goal, sys.num_ops, sys.num_ris));
          }
          break;
        default:
          break;
      }

      smdp::EpisodeRecord record = runner.run_episode(*rp_policy, op_policies);

      MetricsRecord metric;
      metric.episode = e;
      metric.op_mean_rate = record.mean_rate;
      metric.reward = record.rp.reward;
      metric.goal =
          config.allocator == AllocatorKind::None ? -1 : record.goal;
      if (result.rp_agent && result.rp_agent->has_stats) {
        metric.rp_actor_loss = result.rp_agent->stats.actor_loss;
        metric.rp_critic_loss = result.rp_agent->stats.critic_loss;
        metric.rp_ratio_mean = result.rp_agent->stats.ratio_mean;
      }
      metric.op_actor_loss.resize(sys.num_ops, 0.0);
      metric.op_critic_loss.resize(sys.num_ops, 0.0);
      double op_ms = 0.0;
      for (int s = 0; s < sys.num_ops; ++s) {
        if (result.op_agents[s]->has_stats) {
          metric.op_actor_loss[s] = result.op_agents[s]->stats.actor_loss;
          metric.op_critic_loss[s] = result.op_agents[s]->stats.critic_loss;
        }
        op_ms += result.op_agents[s]->take_update_seconds() * 1e3;
      }
      metric.op_update_ms = op_ms;
      metric.rp_update_ms =
          result.rp_agent ? result.rp_agent->take_update_seconds() * 1e3 : 0.0;
      metric.episode_ms =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        episode_start)
              .count() *
          1e3;
      metric.cumulative_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        run_start)
              .count();
      result.records.push_back(std::move(metric));

      if (needs_record) {
        previous = std::move(record);
        has_previous = true;
      }
    }
  } catch (const ppo::TrainingDivergenceError& err) {
    std::ofstream diag((fs::path(config.out_dir) /
                        ("diagnostic_" + std::to_string(seed) + ".txt"))
                           .string());
    diag << "training diverged at episode " << result.records.size() << ": "
         << err.what() << "\n";
    write_metrics_csv(metrics_path, result.records, sys.num_ops);
    write_timing_csv(timing_path, result.records);
    throw;
  }

  write_metrics_csv(metrics_path, result.records, sys.num_ops);
  write_timing_csv(timing_path, result.records);
  save_checkpoints(config, seed, result);
  return result;
}

namespace {

// Centralized scheme: one joint agent replaces the whole hierarchy. Its
// allocation coordinates are applied at the first step of each episode.
RunResult run_centralized(const ExperimentConfig& config, std::uint64_t seed) {
  const env::SystemConfig& sys = config.system;
  const RngStream root(seed);
  RngStream topo_rng = root.child("topology");
  RngStream channel_rng = root.child("channels");

  RunResult result;
  result.topology = env::sample_topology(sys, topo_rng);
  result.centralized = std::make_unique<baselines::CentralizedAgent>(
      sys, config.hidden_width, config.op_hyper(), root.child("central-agent"));

  const int per_op_obs = smdp::op_observation_width(sys);
  const int S = sys.num_ops;
  const int T = sys.steps_per_episode;

  std::vector<std::vector<env::CMatrix>> prev_channels(S);
  std::vector<env::UserAssociation> prev_assoc(S);
  env::RisAllocation alloc;
  alloc.owner.assign(sys.num_ris, 1);

  const std::string metrics_path =
      (fs::path(config.out_dir) / ("metrics_" + std::to_string(seed) + ".csv"))
          .string();
  const std::string timing_path =
      (fs::path(config.out_dir) / ("timing_" + std::to_string(seed) + ".csv"))
          .string();
  result.metrics_path = metrics_path;
  result.timing_path = timing_path;

  const auto run_start = std::chrono::steady_clock::now();

  auto build_joint_obs = [&]() {
    Eigen::VectorXd joint(S * per_op_obs);
    for (int s = 0; s < S; ++s)
      joint.segment(s * per_op_obs, per_op_obs) = smdp::build_op_observation(
          prev_channels[s], prev_assoc[s], alloc, sys);
    return joint;
  };

  try {
    for (int e = 0; e < config.episodes; ++e) {
      const auto episode_start = std::chrono::steady_clock::now();
      Eigen::MatrixXd rates(S, T);

      for (int t = 0; t < T; ++t) {
        env::ChannelSet channels =
            env::sample_channels(result.topology, sys, channel_rng);
        const Eigen::VectorXd obs = build_joint_obs();
        const smdp::OpDecision decision = result.centralized->act(obs);
        if (t == 0)
          alloc = result.centralized->split_allocation(decision.action);
        const std::vector<env::OpAction> actions =
            result.centralized->split_actions(decision.action);
        const env::StepResult step_result =
            env::step(channels, alloc, actions, sys);

        for (int s = 0; s < S; ++s) {
          rates(s, t) = step_result.rate[s];
          prev_channels[s] = step_result.user_channels[s];
          prev_assoc[s] = actions[s].assoc;
        }

        smdp::OpTransition transition;
        transition.obs = obs;
        transition.action = decision.action;
        transition.reward = rates.col(t).sum();
        transition.next_obs = build_joint_obs();
        transition.log_prob = decision.log_prob;
        result.centralized->on_transition(transition);
      }

      MetricsRecord metric;
      metric.episode = e;
      metric.reward = smdp::rp_reward(rates);
      metric.goal = smdp::encode_goal(alloc, sys.num_ops);
      metric.op_mean_rate.resize(S);
      for (int s = 0; s < S; ++s) metric.op_mean_rate[s] = rates.row(s).mean();
      metric.op_actor_loss.assign(S, 0.0);
      metric.op_critic_loss.assign(S, 0.0);
      if (result.centralized->agent().has_stats) {
        metric.op_actor_loss[0] = result.centralized->agent().stats.actor_loss;
        metric.op_critic_loss[0] = result.centralized->agent().stats.critic_loss;
      }
      metric.op_update_ms =
          result.centralized->agent().take_update_seconds() * 1e3;
      metric.episode_ms =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        episode_start)
              .count() *
          1e3;
      metric.cumulative_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        run_start)
              .count();
      result.records.push_back(std::move(metric));
    }
  } catch (const ppo::TrainingDivergenceError& err) {
    std::ofstream diag((fs::path(config.out_dir) /
                        ("diagnostic_" + std::to_string(seed) + ".txt"))
                           .string());
    diag << "training diverged at episode " << result.records.size() << ": "
         << err.what() << "\n";
    write_metrics_csv(metrics_path, result.records, sys.num_ops);
    write_timing_csv(timing_path, result.records);
    throw;
  }

  write_metrics_csv(metrics_path, result.records, sys.num_ops);
  write_timing_csv(timing_path, result.records);
  save_checkpoints(config, seed, result);
  return result;
}

}  // namespace

}  // namespace hdrl::harness
