#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hdrl/ppo.hpp"
#include "hdrl/smdp.hpp"

// Provider-level allocation benchmarks, the exhaustive oracle, the quantized
// continuous goal policy and the centralized joint agent. Operator policies
// stay PPO-trained under every scheme.
namespace hdrl::baselines {

enum class AllocatorKind {
  LearnedHppo,
  LearnedShppo,
  Learned1d,
  Auction,
  Distance,
  Random,
  Greedy,
  ExhaustiveOracle,
  None,
  Centralized,
};

AllocatorKind allocator_from_string(std::string_view tag);
std::string to_string(AllocatorKind kind);

// Uniform i.i.d. owner per surface.
env::RisAllocation allocate_random(int num_ops, int num_ris, RngStream& rng);

// Owner with the shortest average surface-to-user distance; ties go to the
// lowest operator index.
env::RisAllocation allocate_distance(const env::Topology& topology);

// rates(l, s): operator s's rate with surface l serving alone. Row argmax,
// ties to the lowest operator index.
env::RisAllocation allocate_greedy(const Eigen::MatrixXd& rates);

// Single-round sealed bids, per-surface award to the highest bidder.
env::RisAllocation allocate_auction(const Eigen::MatrixXd& bids);

// Uniform quantization of x in (-1,1) onto [0, S^L).
std::int64_t quantized_1d_goal(double x, int num_ops, int num_ris);

// --- previous-episode re-evaluation (greedy/auction/oracle inputs) -----------

// Mean rate of each operator over a recorded episode, re-evaluated under a
// different allocation but the operators' stored actions.
Eigen::VectorXd reevaluate_mean_rates(const smdp::EpisodeRecord& record,
                                      const env::SystemConfig& config,
                                      const env::RisAllocation& alloc);

// rates(l, s): operator s with only surface l assigned to it.
Eigen::MatrixXd standalone_rate_table(const smdp::EpisodeRecord& record,
                                      const env::SystemConfig& config);

// bids(l, s) = standalone rate minus the no-surface rate of the operator.
Eigen::MatrixXd bid_table(const smdp::EpisodeRecord& record,
                          const env::SystemConfig& config);

// --- exhaustive oracle --------------------------------------------------------

struct ExhaustiveResult {
  env::RisAllocation best;
  std::vector<double> mean_reward;  // indexed by encoded goal
};

// Evaluates the episode reward of every allocation over `episodes` seeded
// evaluation episodes with frozen operator policies. Guarded to S^L <= 4096.
ExhaustiveResult exhaustive_best(const env::SystemConfig& config,
                                 const env::Topology& topology,
                                 const std::vector<smdp::OpPolicyBase*>& ops,
                                 int episodes, std::uint64_t seed);

// --- provider policy adapters --------------------------------------------------

// Frozen deterministic view of a trained operator agent; never trains.
class FrozenOpPolicy : public smdp::OpPolicyBase {
 public:
  explicit FrozenOpPolicy(ppo::OpAgent& agent) : agent_(agent) {}
  smdp::OpDecision act(const Eigen::VectorXd& obs) override {
    return agent_.act_mean(obs);
  }

 private:
  ppo::OpAgent& agent_;
};

// Emits a fixed or externally-computed allocation; used by all heuristic
// schemes. The allocation for the next episode is set before running it.
class FixedRpPolicy : public smdp::RpPolicyBase {
 public:
  FixedRpPolicy(int num_ops, int num_ris)
      : num_ops_(num_ops) {
    next_.owner.assign(num_ris, 1);
  }

  void set_allocation(env::RisAllocation alloc) { next_ = std::move(alloc); }

  smdp::RpDecision act(const smdp::RpState& /*state*/) override {
    smdp::RpDecision decision;
    decision.alloc = next_;
    decision.goal = smdp::encode_goal(next_, num_ops_);
    decision.log_prob = {0.0};
    return decision;
  }

 private:
  int num_ops_;
  env::RisAllocation next_;
};

// Greedy provider view of a trained goal agent (argmax action, no training).
class GreedyRpPolicy : public smdp::RpPolicyBase {
 public:
  explicit GreedyRpPolicy(ppo::RpAgentBase& agent) : agent_(agent) {}
  smdp::RpDecision act(const smdp::RpState& state) override {
    return agent_.act_greedy(state);
  }

 private:
  ppo::RpAgentBase& agent_;
};

// --- quantized continuous goal agent -------------------------------------------

// Scalar Beta head over (0,1) mapped to (-1,1) and quantized onto the goal
// grid; otherwise trained exactly like the operator-style policy.
class RpAgent1d : public ppo::RpAgentBase {
 public:
  RpAgent1d(int state_width, int num_ops, int num_ris, int lstm_width,
            int hidden_width, const ppo::HyperParams& hyper, RngStream rng);

  smdp::RpDecision act(const smdp::RpState& state) override;
  smdp::RpDecision act_greedy(const smdp::RpState& state) override;
  ppo::UpdateStats update() override;

  std::vector<neural::ParamBlock*> actor_params() { return actor_.params(); }
  std::vector<neural::ParamBlock*> critic_params() { return critic_.params(); }
  neural::RecurrentNet& actor() { return actor_; }

 private:
  smdp::RpDecision decide(const smdp::RpState& state, bool greedy);

  int num_ops_, num_ris_;
  RngStream rng_;
  neural::RecurrentNet actor_;
  neural::RecurrentNet critic_;
  neural::Adam actor_opt_;
  neural::Adam critic_opt_;
};

// --- centralized joint agent ----------------------------------------------------

// Idealized single PPO agent seeing every operator's observation and emitting
// all operators' actions plus the allocation, all as Beta coordinates. The
// allocation coordinates are read at the first step of each episode and held.
class CentralizedAgent {
 public:
  CentralizedAgent(const env::SystemConfig& config, int hidden_width,
                   const ppo::HyperParams& hyper, RngStream rng);

  static int observation_dim(const env::SystemConfig& config);
  static int action_dim(const env::SystemConfig& config);

  smdp::OpDecision act(const Eigen::VectorXd& obs);
  smdp::OpDecision act_mean(const Eigen::VectorXd& obs);
  void on_transition(const smdp::OpTransition& transition);

  // Splits a joint action into per-operator actions and the allocation.
  std::vector<env::OpAction> split_actions(const Eigen::VectorXd& joint) const;
  env::RisAllocation split_allocation(const Eigen::VectorXd& joint) const;

  ppo::OpAgent& agent() { return agent_; }

 private:
  env::SystemConfig config_;
  ppo::OpAgent agent_;
};

}  // namespace hdrl::baselines
