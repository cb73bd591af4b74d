#include "hdrl/smdp.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace hdrl::smdp {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

}  // namespace

env::CMatrix info_matrix(const env::CMatrix& tx_channels,
                         const env::CMatrix& beam) {
  if (tx_channels.rows() != beam.rows() || tx_channels.cols() != beam.cols())
    throw std::invalid_argument("info_matrix: dimension mismatch");
  return tx_channels.adjoint() * beam;
}

int rp_state_width(const env::SystemConfig& config) {
  return 2 * config.num_ops * config.users_per_op * config.users_per_op;
}

RpState zero_rp_state(const env::SystemConfig& config) {
  return RpState::Zero(rp_state_width(config), config.steps_per_episode);
}

RpState build_rp_state(
    const std::vector<std::vector<env::CMatrix>>& uploads) {
  if (uploads.empty()) throw std::invalid_argument("build_rp_state: no uploads");
  const int S = static_cast<int>(uploads.size());
  const int T = static_cast<int>(uploads[0].size());
  if (T == 0) throw std::invalid_argument("build_rp_state: empty upload");
  int width = 0;
  for (int s = 0; s < S; ++s) {
    if (static_cast<int>(uploads[s].size()) != T)
      throw std::invalid_argument("build_rp_state: missing upload");
    width += 2 * static_cast<int>(uploads[s][0].size());
  }
  RpState state(width, T);
  for (int t = 0; t < T; ++t) {
    int row = 0;
    for (int s = 0; s < S; ++s) {
      const env::CMatrix& u = uploads[s][t];
      const int n = static_cast<int>(u.size());
      state.col(t).segment(row, n) =
          Eigen::Map<const Eigen::VectorXd>(u.real().eval().data(), n);
      row += n;
      state.col(t).segment(row, n) =
          Eigen::Map<const Eigen::VectorXd>(u.imag().eval().data(), n);
      row += n;
    }
  }
  return state;
}

std::int64_t goal_space(int num_ops, int num_ris) {
  std::int64_t space = 1;
  for (int l = 0; l < num_ris; ++l) {
    if (space > (std::int64_t{1} << 62) / num_ops)
      throw std::overflow_error("goal_space: S^L overflows");
    space *= num_ops;
  }
  return space;
}

std::int64_t encode_goal(const env::RisAllocation& alloc, int num_ops) {
  alloc.validate(num_ops);
  std::int64_t g = 0;
  std::int64_t radix = 1;
  for (const int b : alloc.owner) {
    g += radix * (b - 1);
    radix *= num_ops;
  }
  return g;
}

env::RisAllocation decode_goal(std::int64_t goal, int num_ops, int num_ris) {
  if (goal < 0 || goal >= goal_space(num_ops, num_ris))
    throw std::out_of_range("decode_goal: goal index out of range");
  env::RisAllocation alloc;
  alloc.owner.resize(num_ris);
  for (int l = 0; l < num_ris; ++l) {
    alloc.owner[l] = static_cast<int>(goal % num_ops) + 1;
    goal /= num_ops;
  }
  return alloc;
}

int op_observation_width(const env::SystemConfig& config) {
  return 2 * config.num_antennas * config.bs_per_op * config.users_per_op +
         config.users_per_op + config.num_ris * config.num_ops;
}

Eigen::VectorXd build_op_observation(
    const std::vector<env::CMatrix>& prev_user_channels,
    const env::UserAssociation& prev_assoc, const env::RisAllocation& alloc,
    const env::SystemConfig& config) {
  const int K = config.users_per_op;
  const int block = config.num_antennas * config.bs_per_op;
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(op_observation_width(config));

  if (!prev_user_channels.empty()) {
    if (static_cast<int>(prev_user_channels.size()) != K)
      throw std::invalid_argument("build_op_observation: channel count mismatch");
    for (int k = 0; k < K; ++k) {
      const env::CMatrix& h = prev_user_channels[k];
      obs.segment(2 * block * k, block) =
          Eigen::Map<const Eigen::VectorXd>(h.real().eval().data(), block);
      obs.segment(2 * block * k + block, block) =
          Eigen::Map<const Eigen::VectorXd>(h.imag().eval().data(), block);
    }
  }
  const int assoc_offset = 2 * block * K;
  if (!prev_assoc.serving_bs.empty()) {
    for (int k = 0; k < K; ++k)
      obs(assoc_offset + k) =
          static_cast<double>(prev_assoc.serving_bs[k]) / config.bs_per_op;
  }
  const int goal_offset = assoc_offset + K;
  for (int l = 0; l < config.num_ris; ++l)
    obs(goal_offset + l * config.num_ops + (alloc.owner[l] - 1)) = 1.0;
  return obs;
}

int op_action_dim(const env::SystemConfig& config) {
  return config.num_ris * config.elements_per_ris + config.users_per_op +
         2 * config.num_antennas * config.users_per_op;
}

env::OpAction decode_op_action(const Eigen::VectorXd& raw,
                               const env::SystemConfig& config) {
  if (raw.size() != op_action_dim(config))
    throw std::invalid_argument("decode_op_action: wrong action dimensionality");
  const int M = config.elements_per_ris;
  const int K = config.users_per_op;
  const int N = config.num_antennas;

  env::OpAction action;
  action.phases.phase.reserve(config.num_ris);
  for (int l = 0; l < config.num_ris; ++l)
    action.phases.phase.push_back(kTwoPi * raw.segment(l * M, M));

  const int assoc_offset = config.num_ris * M;
  action.assoc.serving_bs.resize(K);
  for (int k = 0; k < K; ++k) {
    const int bin =
        1 + static_cast<int>(std::floor(raw(assoc_offset + k) * config.bs_per_op));
    action.assoc.serving_bs[k] = std::min(bin, config.bs_per_op);
  }

  const int beam_offset = assoc_offset + K;
  action.beam_raw.resize(N, K);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) {
      const int idx = beam_offset + k * N + n;
      action.beam_raw(n, k) =
          env::Complex(2.0 * raw(idx) - 1.0, 2.0 * raw(N * K + idx) - 1.0);
    }
  }
  return action;
}

double rp_reward(const Eigen::MatrixXd& rates) {
  return rates.sum() / rates.cols();
}

EpisodeRunner::EpisodeRunner(const env::SystemConfig& config,
                             env::Topology topology, std::uint64_t channel_seed)
    : config_(config),
      topology_(std::move(topology)),
      channel_rng_(channel_seed),
      state_(zero_rp_state(config)) {
  config_.validate();
  prev_user_channels_.assign(config_.num_ops, {});
  prev_assoc_.assign(config_.num_ops, {});
}

EpisodeRecord EpisodeRunner::run_episode(RpPolicyBase& rp,
                                         const std::vector<OpPolicyBase*>& ops) {
  const int S = config_.num_ops;
  const int T = config_.steps_per_episode;
  if (static_cast<int>(ops.size()) != S)
    throw std::invalid_argument("run_episode: one policy per operator required");

  const RpDecision decision = rp.act(state_);
  decision.alloc.validate(S);

  EpisodeRecord record;
  record.op.resize(S);
  record.rates.resize(S, T);
  record.goal = decision.goal;

  std::vector<std::vector<env::CMatrix>> uploads(S);
  std::vector<Eigen::VectorXd> obs(S);
  std::vector<OpDecision> op_decisions(S);
  std::vector<env::OpAction> actions(S);

  for (int t = 0; t < T; ++t) {
    env::ChannelSet channels = sample_channels(topology_, config_, channel_rng_);
    if (zero_reflection_) env::zero_reflected_paths(channels);

    for (int s = 0; s < S; ++s) {
      obs[s] = build_op_observation(prev_user_channels_[s], prev_assoc_[s],
                                    decision.alloc, config_);
      op_decisions[s] = ops[s]->act(obs[s]);
      actions[s] = decode_op_action(op_decisions[s].action, config_);
    }

    const env::StepResult result =
        env::step(channels, decision.alloc, actions, config_);

    for (int s = 0; s < S; ++s) {
      record.rates(s, t) = result.rate[s];
      uploads[s].push_back(info_matrix(result.tx_channels[s], result.beam[s]));

      OpTransition transition;
      transition.obs = obs[s];
      transition.action = op_decisions[s].action;
      transition.reward = result.rate[s];
      transition.next_obs = build_op_observation(
          result.user_channels[s], actions[s].assoc, decision.alloc, config_);
      transition.log_prob = op_decisions[s].log_prob;
      record.op[s].push_back(transition);
      ops[s]->on_transition(record.op[s].back());

      prev_user_channels_[s] = result.user_channels[s];
      prev_assoc_[s] = actions[s].assoc;
    }

    if (record_steps_)
      record.steps.push_back(StepRecord{std::move(channels), actions});
  }

  RpState next_state = build_rp_state(uploads);
  RpTransition transition;
  transition.state = state_;
  transition.goal = decision.goal;
  transition.reward = rp_reward(record.rates);
  transition.next_state = next_state;
  transition.log_prob = decision.log_prob;
  transition.continuous_action = decision.continuous_action;

  record.rp = transition;
  record.mean_rate.resize(S);
  for (int s = 0; s < S; ++s) record.mean_rate[s] = record.rates.row(s).mean();

  rp.on_episode(record.rp);
  state_ = std::move(next_state);
  return record;
}

}  // namespace hdrl::smdp
