#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "hdrl/neural.hpp"
#include "hdrl/smdp.hpp"

// Clipped-surrogate policy optimization at both decision scales: one
// provider-level agent (flat categorical head over the whole goal space,
// sequential per-surface heads, or a quantized continuous head) and one
// Beta-policy agent per operator.
namespace hdrl::ppo {

using neural::Matrix;
using neural::Vector;

struct HyperParams {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double lr_actor = 1e-4;
  double lr_critic = 1e-4;
  int batch = 30;  // transitions per update
  double entropy_coef = 0.0;
  bool normalize_advantages = false;
  int update_epochs = 1;
};

class TrainingDivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generalized advantage estimation over a batch horizon. `values` holds one
// extra trailing entry, the bootstrap value of the state after the batch.
Vector gae(const Vector& rewards, const Vector& values, double gamma,
           double lambda);

// Clip envelope: (1+eps)*A for A >= 0, (1-eps)*A otherwise.
double clip_u(double advantage, double eps);

// Mean over samples of min(ratio * A, clip_u(A)), with the gradient taken
// w.r.t. the new log-probabilities. Throws TrainingDivergenceError on a
// non-finite ratio.
struct SurrogateResult {
  double value = 0.0;
  Vector d_new_log_prob;
  Vector ratio;
};
SurrogateResult clipped_surrogate(const Vector& new_log_prob,
                                  const Vector& old_log_prob,
                                  const Vector& advantages, double eps);

// Mean squared one-step TD residual, differentiated through both value
// evaluations. d_value has 2n entries: the first n w.r.t. V(s), the rest
// w.r.t. V(s').
struct TdLossResult {
  double value = 0.0;
  Vector d_value;
};
TdLossResult td_squared_loss(const Vector& v_state, const Vector& v_next,
                             const Vector& rewards, double gamma);

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double ratio_mean = 1.0;
  double adv_mean = 0.0;
  double adv_std = 0.0;
};

// --- loss objectives ----------------------------------------------------------
// Shared by the agents' update passes and by the gradient-check suites. Each
// objective runs the network forward, returns the loss value and, when
// `with_grads` is set, accumulates d(value)/d(params) into the network.

struct ObjectiveResult {
  double value = 0.0;
  double ratio_mean = 1.0;
};

inline void scale_grads(const std::vector<neural::ParamBlock*>& params,
                        double factor) {
  for (neural::ParamBlock* block : params) block->grad *= factor;
}

// Clipped-surrogate objective for a Beta policy head (to be maximized).
template <class Net, class Input>
ObjectiveResult beta_actor_objective(Net& actor, const Input& input,
                                     const Matrix& actions,
                                     const Vector& old_log_prob,
                                     const Vector& advantages, double clip_eps,
                                     double entropy_coef, bool with_grads) {
  const int n = static_cast<int>(old_log_prob.size());
  const Matrix& raw = actor.forward(input);
  std::vector<neural::BetaParams> params(n);
  Vector new_lp(n);
  for (int i = 0; i < n; ++i) {
    params[i] = neural::beta_from_raw(raw.col(i));
    new_lp(i) = neural::beta_log_prob(params[i], actions.col(i));
  }
  const SurrogateResult surr =
      clipped_surrogate(new_lp, old_log_prob, advantages, clip_eps);
  double entropy = 0.0;
  if (entropy_coef != 0.0)
    for (int i = 0; i < n; ++i) entropy += neural::beta_entropy(params[i]) / n;
  if (with_grads) {
    Matrix d_raw(raw.rows(), n);
    for (int i = 0; i < n; ++i) {
      d_raw.col(i) =
          surr.d_new_log_prob(i) *
          neural::beta_log_prob_grad_raw(params[i], actions.col(i), raw.col(i));
      if (entropy_coef != 0.0)
        d_raw.col(i) += (entropy_coef / n) *
                        neural::beta_entropy_grad_raw(params[i], raw.col(i));
    }
    actor.backward(d_raw);
  }
  return {surr.value + entropy_coef * entropy, surr.ratio.mean()};
}

// Clipped-surrogate objective for a categorical policy head (to be maximized).
template <class Net, class Input>
ObjectiveResult categorical_actor_objective(
    Net& actor, const Input& input, const std::vector<int>& choices,
    const Vector& old_log_prob, const Vector& advantages, double clip_eps,
    double entropy_coef, bool with_grads) {
  const int n = static_cast<int>(old_log_prob.size());
  const Matrix& logits = actor.forward(input);
  Vector new_lp(n);
  for (int i = 0; i < n; ++i)
    new_lp(i) = neural::categorical_log_prob(logits.col(i), choices[i]);
  const SurrogateResult surr =
      clipped_surrogate(new_lp, old_log_prob, advantages, clip_eps);
  double entropy = 0.0;
  if (entropy_coef != 0.0)
    for (int i = 0; i < n; ++i)
      entropy += neural::categorical_entropy(logits.col(i)) / n;
  if (with_grads) {
    Matrix d_logits(logits.rows(), n);
    for (int i = 0; i < n; ++i) {
      d_logits.col(i) =
          surr.d_new_log_prob(i) *
          neural::categorical_log_prob_grad(logits.col(i), choices[i]);
      if (entropy_coef != 0.0)
        d_logits.col(i) += (entropy_coef / n) *
                           neural::categorical_entropy_grad(logits.col(i));
    }
    actor.backward(d_logits);
  }
  return {surr.value + entropy_coef * entropy, surr.ratio.mean()};
}

// Mean squared TD residual (to be minimized). The input holds the state batch
// in its first n columns and the successor batch in the last n.
template <class Net, class Input>
double td_critic_objective(Net& critic, const Input& input,
                           const Vector& rewards, double gamma,
                           bool with_grads) {
  const int n = static_cast<int>(rewards.size());
  const Matrix& v = critic.forward(input);
  Vector v_state(n), v_next(n);
  for (int i = 0; i < n; ++i) {
    v_state(i) = v(0, i);
    v_next(i) = v(0, n + i);
  }
  const TdLossResult td = td_squared_loss(v_state, v_next, rewards, gamma);
  if (with_grads) critic.backward(td.d_value.transpose());
  return td.value;
}

// --- operator-level agent ------------------------------------------------

class OpAgent : public smdp::OpPolicyBase {
 public:
  OpAgent(int obs_dim, int action_dim, int hidden_width,
          const HyperParams& hyper, RngStream rng);

  smdp::OpDecision act(const Eigen::VectorXd& obs) override;
  smdp::OpDecision act_mean(const Eigen::VectorXd& obs);  // no randomness
  void on_transition(const smdp::OpTransition& transition) override;

  // Full-buffer update; clears the buffer. Throws std::logic_error when the
  // buffer is not exactly full.
  UpdateStats update();

  const std::vector<smdp::OpTransition>& buffer() const { return buffer_; }
  std::vector<neural::ParamBlock*> actor_params() { return actor_.params(); }
  std::vector<neural::ParamBlock*> critic_params() { return critic_.params(); }
  neural::Mlp& actor() { return actor_; }
  neural::Mlp& critic() { return critic_; }
  const HyperParams& hyper() const { return hyper_; }

  // Accumulated wall time spent in update() since the last call; resets.
  double take_update_seconds() {
    const double v = update_seconds_;
    update_seconds_ = 0.0;
    return v;
  }

  bool has_stats = false;
  UpdateStats stats;

 private:
  HyperParams hyper_;
  int action_dim_;
  RngStream rng_;
  neural::Mlp actor_;
  neural::Mlp critic_;
  neural::Adam actor_opt_;
  neural::Adam critic_opt_;
  std::vector<smdp::OpTransition> buffer_;
  double update_seconds_ = 0.0;
};

// --- provider-level agents -------------------------------------------------

// Shared buffer/update cadence for the provider side.
class RpAgentBase : public smdp::RpPolicyBase {
 public:
  RpAgentBase(const HyperParams& hyper) : hyper_(hyper) {}

  void on_episode(const smdp::RpTransition& transition) override;
  virtual UpdateStats update() = 0;
  virtual smdp::RpDecision act_greedy(const smdp::RpState& state) = 0;

  const std::vector<smdp::RpTransition>& buffer() const { return buffer_; }
  const HyperParams& hyper() const { return hyper_; }

  double take_update_seconds() {
    const double v = update_seconds_;
    update_seconds_ = 0.0;
    return v;
  }

  bool has_stats = false;
  UpdateStats stats;

 protected:
  void require_full_buffer() const;

  HyperParams hyper_;
  std::vector<smdp::RpTransition> buffer_;
  double update_seconds_ = 0.0;
};

// Flat categorical head over all S^L allocations.
class RpAgentHppo : public RpAgentBase {
 public:
  RpAgentHppo(int state_width, int num_ops, int num_ris, int lstm_width,
              int hidden_width, const HyperParams& hyper, RngStream rng);

  smdp::RpDecision act(const smdp::RpState& state) override;
  smdp::RpDecision act_greedy(const smdp::RpState& state) override;
  UpdateStats update() override;

  std::vector<neural::ParamBlock*> actor_params() { return actor_.params(); }
  std::vector<neural::ParamBlock*> critic_params() { return critic_.params(); }
  neural::RecurrentNet& actor() { return actor_; }
  neural::RecurrentNet& critic() { return critic_; }

 private:
  smdp::RpDecision decide(const smdp::RpState& state, bool greedy);

  int num_ops_, num_ris_;
  RngStream rng_;
  neural::RecurrentNet actor_;
  neural::RecurrentNet critic_;
  neural::Adam actor_opt_;
  neural::Adam critic_opt_;
};

// Sequential decomposition: L chained actors, each choosing one surface's
// owner conditioned on the state and all previously chosen sub-goals; one
// shared critic on the top-level transitions.
class RpAgentSeq : public RpAgentBase {
 public:
  RpAgentSeq(int state_width, int num_ops, int num_ris, int lstm_width,
             int hidden_width, const HyperParams& hyper, RngStream rng);

  smdp::RpDecision act(const smdp::RpState& state) override;
  smdp::RpDecision act_greedy(const smdp::RpState& state) override;
  UpdateStats update() override;

  std::vector<neural::RecurrentNet>& actors() { return actors_; }
  neural::RecurrentNet& critic() { return critic_; }
  std::vector<neural::ParamBlock*> actor_params();
  std::vector<neural::ParamBlock*> critic_params() { return critic_.params(); }

 private:
  smdp::RpDecision decide(const smdp::RpState& state, bool greedy);

  int num_ops_, num_ris_;
  RngStream rng_;
  std::vector<neural::RecurrentNet> actors_;
  std::vector<neural::Adam> actor_opts_;
  neural::RecurrentNet critic_;
  neural::Adam critic_opt_;
};

// --- shared batch and update machinery (also used by goal-policy variants) ---

// Stacks per-step columns of a set of states into an LSTM input sequence.
// extra[b] is appended below every step's features for sample b.
std::vector<Matrix> state_seq_batch(
    const std::vector<const smdp::RpState*>& states,
    const std::vector<Vector>& extra = {});

// Advantage estimates for a full provider buffer; also emits the
// state/next-state concatenated sequence reused by the critic epochs.
Vector rp_advantages(neural::RecurrentNet& critic,
                     const std::vector<smdp::RpTransition>& buffer,
                     double gamma, double lambda,
                     std::vector<Matrix>& concat_seq_out);

// Critic regression epochs on the concatenated batch; returns the
// first-epoch loss.
double rp_critic_epochs(neural::RecurrentNet& critic, neural::Adam& opt,
                        const std::vector<Matrix>& concat_seq,
                        const Vector& rewards, double gamma, int epochs);

}  // namespace hdrl::ppo
