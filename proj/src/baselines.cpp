#include "hdrl/baselines.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hdrl::baselines {

AllocatorKind allocator_from_string(std::string_view tag) {
  if (tag == "learned-hppo") return AllocatorKind::LearnedHppo;
  if (tag == "learned-shppo") return AllocatorKind::LearnedShppo;
  if (tag == "learned-1d") return AllocatorKind::Learned1d;
  if (tag == "auction") return AllocatorKind::Auction;
  if (tag == "distance") return AllocatorKind::Distance;
  if (tag == "random") return AllocatorKind::Random;
  if (tag == "greedy") return AllocatorKind::Greedy;
  if (tag == "exhaustive-oracle") return AllocatorKind::ExhaustiveOracle;
  if (tag == "none") return AllocatorKind::None;
  if (tag == "centralized") return AllocatorKind::Centralized;
  throw std::invalid_argument("unknown allocator: " + std::string(tag));
}

std::string to_string(AllocatorKind kind) {
  switch (kind) {
    case AllocatorKind::LearnedHppo: return "learned-hppo";
    case AllocatorKind::LearnedShppo: return "learned-shppo";
    case AllocatorKind::Learned1d: return "learned-1d";
    case AllocatorKind::Auction: return "auction";
    case AllocatorKind::Distance: return "distance";
    case AllocatorKind::Random: return "random";
    case AllocatorKind::Greedy: return "greedy";
    case AllocatorKind::ExhaustiveOracle: return "exhaustive-oracle";
    case AllocatorKind::None: return "none";
    case AllocatorKind::Centralized: return "centralized";
  }
  throw std::logic_error("unreachable allocator kind");
}

env::RisAllocation allocate_random(int num_ops, int num_ris, RngStream& rng) {
  env::RisAllocation alloc;
  alloc.owner.resize(num_ris);
  for (int l = 0; l < num_ris; ++l)
    alloc.owner[l] = 1 + static_cast<int>(rng.uniform_int(num_ops));
  return alloc;
}

env::RisAllocation allocate_distance(const env::Topology& topology) {
  const int num_ops = static_cast<int>(topology.users.size());
  const int num_ris = static_cast<int>(topology.ris.size());
  env::RisAllocation alloc;
  alloc.owner.resize(num_ris);
  for (int l = 0; l < num_ris; ++l) {
    double best = std::numeric_limits<double>::infinity();
    int winner = 1;
    for (int s = 0; s < num_ops; ++s) {
      double sum = 0.0;
      for (const env::Vec2& user : topology.users[s])
        sum += (topology.ris[l] - user).norm();
      const double mean = sum / topology.users[s].size();
      if (mean < best) {
        best = mean;
        winner = s + 1;
      }
    }
    alloc.owner[l] = winner;
  }
  return alloc;
}

namespace {

env::RisAllocation row_argmax(const Eigen::MatrixXd& table) {
  if (table.size() == 0)
    throw std::invalid_argument("allocator: missing evaluation table");
  env::RisAllocation alloc;
  alloc.owner.resize(table.rows());
  for (int l = 0; l < table.rows(); ++l) {
    int winner = 0;
    double best = table(l, 0);
    for (int s = 1; s < table.cols(); ++s) {
      if (table(l, s) > best) {
        best = table(l, s);
        winner = s;
      }
    }
    alloc.owner[l] = winner + 1;
  }
  return alloc;
}

}  // namespace

env::RisAllocation allocate_greedy(const Eigen::MatrixXd& rates) {
  return row_argmax(rates);
}

env::RisAllocation allocate_auction(const Eigen::MatrixXd& bids) {
  env::RisAllocation alloc = row_argmax(bids);
  // Degenerate award: a surface nobody bids positively for falls to the
  // first operator.
  for (int l = 0; l < bids.rows(); ++l)
    if (bids.row(l).maxCoeff() < 0.0) alloc.owner[l] = 1;
  return alloc;
}

std::int64_t quantized_1d_goal(double x, int num_ops, int num_ris) {
  if (x <= -1.0 || x >= 1.0)
    throw std::domain_error("quantized_1d_goal: input outside (-1, 1)");
  const std::int64_t space = smdp::goal_space(num_ops, num_ris);
  const std::int64_t g =
      static_cast<std::int64_t>(std::floor((x + 1.0) / 2.0 * space));
  return std::min(g, space - 1);
}

Eigen::VectorXd reevaluate_mean_rates(const smdp::EpisodeRecord& record,
                                      const env::SystemConfig& config,
                                      const env::RisAllocation& alloc) {
  if (record.steps.empty())
    throw std::invalid_argument("reevaluate_mean_rates: record has no steps");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(config.num_ops);
  for (const smdp::StepRecord& step : record.steps) {
    const env::StepResult result =
        env::step(step.channels, alloc, step.actions, config);
    for (int s = 0; s < config.num_ops; ++s) mean(s) += result.rate[s];
  }
  return mean / static_cast<double>(record.steps.size());
}

Eigen::MatrixXd standalone_rate_table(const smdp::EpisodeRecord& record,
                                      const env::SystemConfig& config) {
  Eigen::MatrixXd rates(config.num_ris, config.num_ops);
  for (int l = 0; l < config.num_ris; ++l) {
    for (int s = 0; s < config.num_ops; ++s) {
      // Surface l serves operator s+1 alone; every other surface reflects
      // as identity for everyone (owner 0 matches no operator).
      env::RisAllocation alloc;
      alloc.owner.assign(config.num_ris, 0);
      alloc.owner[l] = s + 1;
      rates(l, s) = reevaluate_mean_rates(record, config, alloc)(s);
    }
  }
  return rates;
}

Eigen::MatrixXd bid_table(const smdp::EpisodeRecord& record,
                          const env::SystemConfig& config) {
  const Eigen::MatrixXd standalone = standalone_rate_table(record, config);
  env::RisAllocation nothing;
  nothing.owner.assign(config.num_ris, 0);
  const Eigen::VectorXd base = reevaluate_mean_rates(record, config, nothing);
  Eigen::MatrixXd bids = standalone;
  for (int s = 0; s < config.num_ops; ++s) bids.col(s).array() -= base(s);
  return bids;
}

ExhaustiveResult exhaustive_best(const env::SystemConfig& config,
                                 const env::Topology& topology,
                                 const std::vector<smdp::OpPolicyBase*>& ops,
                                 int episodes, std::uint64_t seed) {
  const std::int64_t space = smdp::goal_space(config.num_ops, config.num_ris);
  if (space > 4096)
    throw std::invalid_argument("exhaustive_best: goal space exceeds 4096");

  ExhaustiveResult result;
  result.mean_reward.resize(space);
  double best = -std::numeric_limits<double>::infinity();
  for (std::int64_t g = 0; g < space; ++g) {
    FixedRpPolicy rp(config.num_ops, config.num_ris);
    rp.set_allocation(smdp::decode_goal(g, config.num_ops, config.num_ris));
    smdp::EpisodeRunner runner(config, topology, seed);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e)
      total += runner.run_episode(rp, ops).rp.reward;
    result.mean_reward[g] = total / episodes;
    if (result.mean_reward[g] > best) {
      best = result.mean_reward[g];
      result.best = smdp::decode_goal(g, config.num_ops, config.num_ris);
    }
  }
  return result;
}

// --- quantized continuous goal agent -------------------------------------------

RpAgent1d::RpAgent1d(int state_width, int num_ops, int num_ris, int lstm_width,
                     int hidden_width, const ppo::HyperParams& hyper,
                     RngStream rng)
    : ppo::RpAgentBase(hyper),
      num_ops_(num_ops),
      num_ris_(num_ris),
      rng_(rng),
      actor_(state_width, lstm_width, {hidden_width, hidden_width}, 2, 0.01,
             rng_, "rp_actor"),
      critic_(state_width, lstm_width, {hidden_width, hidden_width}, 1, 1.0,
              rng_, "rp_critic"),
      actor_opt_(hyper.lr_actor),
      critic_opt_(hyper.lr_critic) {
  buffer_.reserve(hyper.batch);
}

smdp::RpDecision RpAgent1d::decide(const smdp::RpState& state, bool greedy) {
  const std::vector<ppo::Matrix> seq = ppo::state_seq_batch({&state});
  const ppo::Matrix& raw = actor_.forward(seq);
  const neural::BetaParams params = neural::beta_from_raw(raw.col(0));
  const ppo::Vector a =
      greedy ? neural::beta_mean(params) : neural::beta_sample(params, rng_);
  smdp::RpDecision decision;
  decision.continuous_action = a;
  decision.goal = quantized_1d_goal(2.0 * a(0) - 1.0, num_ops_, num_ris_);
  decision.alloc = smdp::decode_goal(decision.goal, num_ops_, num_ris_);
  decision.log_prob = {neural::beta_log_prob(params, a)};
  return decision;
}

smdp::RpDecision RpAgent1d::act(const smdp::RpState& state) {
  return decide(state, false);
}

smdp::RpDecision RpAgent1d::act_greedy(const smdp::RpState& state) {
  return decide(state, true);
}

ppo::UpdateStats RpAgent1d::update() {
  const auto t_start = std::chrono::steady_clock::now();
  require_full_buffer();
  const int n = hyper_.batch;

  std::vector<ppo::Matrix> concat_seq;
  ppo::Vector advantages = ppo::rp_advantages(critic_, buffer_, hyper_.gamma,
                                              hyper_.gae_lambda, concat_seq);
  ppo::UpdateStats out;
  {
    const double mean = advantages.mean();
    const double var =
        (advantages.array() - mean).square().sum() / advantages.size();
    out.adv_mean = mean;
    out.adv_std = std::sqrt(var);
    if (hyper_.normalize_advantages)
      advantages = (advantages.array() - mean) / (out.adv_std + 1e-8);
  }

  std::vector<const smdp::RpState*> states;
  states.reserve(n);
  for (const auto& tr : buffer_) states.push_back(&tr.state);
  const std::vector<ppo::Matrix> seq = ppo::state_seq_batch(states);

  ppo::Matrix actions(1, n);
  ppo::Vector rewards(n), old_lp(n);
  for (int i = 0; i < n; ++i) {
    actions(0, i) = buffer_[i].continuous_action(0);
    rewards(i) = buffer_[i].reward;
    old_lp(i) = buffer_[i].log_prob.at(0);
  }

  for (int epoch = 0; epoch < hyper_.update_epochs; ++epoch) {
    const ppo::ObjectiveResult obj = ppo::beta_actor_objective(
        actor_, seq, actions, old_lp, advantages, hyper_.clip_eps,
        hyper_.entropy_coef, true);
    ppo::scale_grads(actor_.params(), -1.0);
    actor_opt_.step(actor_.params());
    if (epoch == 0) {
      out.actor_loss = obj.value;
      out.ratio_mean = obj.ratio_mean;
    }
  }

  out.critic_loss = ppo::rp_critic_epochs(critic_, critic_opt_, concat_seq,
                                          rewards, hyper_.gamma,
                                          hyper_.update_epochs);
  buffer_.clear();
  stats = out;
  has_stats = true;
  update_seconds_ +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return out;
}

// --- centralized joint agent ----------------------------------------------------

int CentralizedAgent::observation_dim(const env::SystemConfig& config) {
  return config.num_ops * smdp::op_observation_width(config);
}

int CentralizedAgent::action_dim(const env::SystemConfig& config) {
  return config.num_ops * smdp::op_action_dim(config) + config.num_ris;
}

CentralizedAgent::CentralizedAgent(const env::SystemConfig& config,
                                   int hidden_width,
                                   const ppo::HyperParams& hyper, RngStream rng)
    : config_(config),
      agent_(observation_dim(config), action_dim(config), hidden_width, hyper,
             rng) {}

smdp::OpDecision CentralizedAgent::act(const Eigen::VectorXd& obs) {
  return agent_.act(obs);
}

smdp::OpDecision CentralizedAgent::act_mean(const Eigen::VectorXd& obs) {
  return agent_.act_mean(obs);
}

void CentralizedAgent::on_transition(const smdp::OpTransition& transition) {
  agent_.on_transition(transition);
}

std::vector<env::OpAction> CentralizedAgent::split_actions(
    const Eigen::VectorXd& joint) const {
  const int d = smdp::op_action_dim(config_);
  std::vector<env::OpAction> actions;
  actions.reserve(config_.num_ops);
  for (int s = 0; s < config_.num_ops; ++s)
    actions.push_back(smdp::decode_op_action(joint.segment(s * d, d), config_));
  return actions;
}

env::RisAllocation CentralizedAgent::split_allocation(
    const Eigen::VectorXd& joint) const {
  const int offset = config_.num_ops * smdp::op_action_dim(config_);
  env::RisAllocation alloc;
  alloc.owner.resize(config_.num_ris);
  for (int l = 0; l < config_.num_ris; ++l) {
    const int bin =
        1 + static_cast<int>(std::floor(joint(offset + l) * config_.num_ops));
    alloc.owner[l] = std::min(bin, config_.num_ops);
  }
  return alloc;
}

}  // namespace hdrl::baselines
