#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "hdrl/env.hpp"
#include "hdrl/rng.hpp"

// Two-time-scale decision process: provider-level state/goal/reward built from
// operator uploads, operator-level observation/action/reward at the time-step
// scale, and the episode loop that ties them to the environment.
namespace hdrl::smdp {

// Provider-level state: column t holds the uploaded features of time step t
// of the previous episode, width 2 * sum_s K_s^2.
using RpState = Eigen::MatrixXd;

// Equivalent information matrix U = H^H W (K_s x K_s).
env::CMatrix info_matrix(const env::CMatrix& tx_channels,
                         const env::CMatrix& beam);

int rp_state_width(const env::SystemConfig& config);
RpState zero_rp_state(const env::SystemConfig& config);

// uploads[s][t] is operator s's information matrix at step t.
RpState build_rp_state(
    const std::vector<std::vector<env::CMatrix>>& uploads);

// Goal codec: mixed-radix base-S positional code, surface 1 least
// significant, owner indices 1..S mapped to digits 0..S-1.
std::int64_t goal_space(int num_ops, int num_ris);
std::int64_t encode_goal(const env::RisAllocation& alloc, int num_ops);
env::RisAllocation decode_goal(std::int64_t goal, int num_ops, int num_ris);

// Operator observation layout:
//   [Re(H_1), Im(H_1), ..., Re(H_K), Im(H_K)]  (previous-step channels)
//   [a_1/J, ..., a_K/J]                        (previous association)
//   [one-hot owner per surface, length L*S]    (current goal)
// Empty channel/association inputs are zero-filled (start of a run).
int op_observation_width(const env::SystemConfig& config);
Eigen::VectorXd build_op_observation(
    const std::vector<env::CMatrix>& prev_user_channels,
    const env::UserAssociation& prev_assoc, const env::RisAllocation& alloc,
    const env::SystemConfig& config);

// Raw action vector width: sum_l M_l + K_s + 2*N*K_s.
int op_action_dim(const env::SystemConfig& config);

// phases = 2*pi*raw; association by uniform binning into {1..J_s};
// beamforming Re/Im = 2*raw - 1 (real block then imaginary block,
// column-major N x K_s).
env::OpAction decode_op_action(const Eigen::VectorXd& raw,
                               const env::SystemConfig& config);

// Episode reward: (1/T) * sum_s sum_t R_s^t over an S x T rate table.
double rp_reward(const Eigen::MatrixXd& rates);

struct OpTransition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;  // raw coordinates in (0,1)
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  double log_prob = 0.0;  // behavior-policy log-probability
};

struct RpTransition {
  RpState state;
  std::int64_t goal = 0;
  double reward = 0.0;
  RpState next_state;
  std::vector<double> log_prob;        // one entry, or one per sub-goal
  Eigen::VectorXd continuous_action;   // used by continuous goal policies
};

struct RpDecision {
  env::RisAllocation alloc;
  std::int64_t goal = 0;
  std::vector<double> log_prob;
  Eigen::VectorXd continuous_action;
};

struct OpDecision {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

class RpPolicyBase {
 public:
  virtual ~RpPolicyBase() = default;
  virtual RpDecision act(const RpState& state) = 0;
  virtual void on_episode(const RpTransition& /*transition*/) {}
};

class OpPolicyBase {
 public:
  virtual ~OpPolicyBase() = default;
  virtual OpDecision act(const Eigen::VectorXd& obs) = 0;
  virtual void on_transition(const OpTransition& /*transition*/) {}
};

struct StepRecord {
  env::ChannelSet channels;
  std::vector<env::OpAction> actions;
};

struct EpisodeRecord {
  RpTransition rp;
  std::vector<std::vector<OpTransition>> op;  // [s][t]
  Eigen::MatrixXd rates;                      // S x T
  std::vector<double> mean_rate;              // per OP
  std::int64_t goal = 0;
  std::vector<StepRecord> steps;              // filled when recording enabled
};

// Runs episodes against the simulator, carrying observation history and the
// provider state across episode boundaries. The channel stream is the only
// randomness consumed here; policies own their sampling streams.
class EpisodeRunner {
 public:
  EpisodeRunner(const env::SystemConfig& config, env::Topology topology,
                std::uint64_t channel_seed);

  void set_zero_reflection(bool on) { zero_reflection_ = on; }
  void set_record_steps(bool on) { record_steps_ = on; }

  EpisodeRecord run_episode(RpPolicyBase& rp,
                            const std::vector<OpPolicyBase*>& ops);

  const RpState& state() const { return state_; }
  const env::Topology& topology() const { return topology_; }
  const env::SystemConfig& config() const { return config_; }

 private:
  env::SystemConfig config_;
  env::Topology topology_;
  RngStream channel_rng_;
  bool zero_reflection_ = false;
  bool record_steps_ = false;

  RpState state_;  // s^e, built from the previous episode's uploads
  std::vector<std::vector<env::CMatrix>> prev_user_channels_;  // [s][k]
  std::vector<env::UserAssociation> prev_assoc_;               // [s]
};

}  // namespace hdrl::smdp
