#include "hdrl/ppo.hpp"

#include <chrono>
#include <cmath>
#include <string>

namespace hdrl::ppo {

Vector gae(const Vector& rewards, const Vector& values, double gamma,
           double lambda) {
  const int n = static_cast<int>(rewards.size());
  if (values.size() != n + 1)
    throw std::invalid_argument("gae: values must have one trailing bootstrap");
  Vector advantages(n);
  double acc = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    const double delta = rewards(i) + gamma * values(i + 1) - values(i);
    acc = delta + gamma * lambda * acc;
    advantages(i) = acc;
  }
  return advantages;
}

double clip_u(double advantage, double eps) {
  return advantage >= 0.0 ? (1.0 + eps) * advantage : (1.0 - eps) * advantage;
}

SurrogateResult clipped_surrogate(const Vector& new_log_prob,
                                  const Vector& old_log_prob,
                                  const Vector& advantages, double eps) {
  const int n = static_cast<int>(new_log_prob.size());
  if (old_log_prob.size() != n || advantages.size() != n)
    throw std::invalid_argument("clipped_surrogate: length mismatch");
  SurrogateResult result;
  result.d_new_log_prob = Vector::Zero(n);
  result.ratio.resize(n);
  for (int i = 0; i < n; ++i) {
    const double ratio = std::exp(new_log_prob(i) - old_log_prob(i));
    if (!std::isfinite(ratio))
      throw TrainingDivergenceError("clipped_surrogate: non-finite ratio");
    result.ratio(i) = ratio;
    const double unclipped = ratio * advantages(i);
    const double clipped = clip_u(advantages(i), eps);
    if (unclipped <= clipped) {
      result.value += unclipped;
      result.d_new_log_prob(i) = unclipped;  // d(exp(lp - old) * A)/d lp
    } else {
      result.value += clipped;
    }
  }
  result.value /= n;
  result.d_new_log_prob /= n;
  return result;
}

TdLossResult td_squared_loss(const Vector& v_state, const Vector& v_next,
                             const Vector& rewards, double gamma) {
  const int n = static_cast<int>(rewards.size());
  if (v_state.size() != n || v_next.size() != n)
    throw std::invalid_argument("td_squared_loss: length mismatch");
  TdLossResult result;
  result.d_value = Vector::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    const double residual = rewards(i) + gamma * v_next(i) - v_state(i);
    result.value += residual * residual;
    result.d_value(i) = -2.0 * residual / n;
    result.d_value(n + i) = 2.0 * gamma * residual / n;
  }
  result.value /= n;
  return result;
}

namespace {

void maybe_normalize(Vector& advantages, bool enabled, UpdateStats& stats) {
  const double mean = advantages.mean();
  const double var =
      (advantages.array() - mean).square().sum() / advantages.size();
  stats.adv_mean = mean;
  stats.adv_std = std::sqrt(var);
  if (enabled)
    advantages = (advantages.array() - mean) / (stats.adv_std + 1e-8);
}

}  // namespace

// --- operator-level agent ------------------------------------------------

OpAgent::OpAgent(int obs_dim, int action_dim, int hidden_width,
                 const HyperParams& hyper, RngStream rng)
    : hyper_(hyper),
      action_dim_(action_dim),
      rng_(rng),
      actor_(neural::make_mlp(obs_dim,
                              {hidden_width, hidden_width, hidden_width},
                              2 * action_dim, 0.01, rng_, "op_actor")),
      critic_(neural::make_mlp(obs_dim,
                               {hidden_width, hidden_width, hidden_width}, 1,
                               1.0, rng_, "op_critic")),
      actor_opt_(hyper.lr_actor),
      critic_opt_(hyper.lr_critic) {
  buffer_.reserve(hyper.batch);
}

smdp::OpDecision OpAgent::act(const Eigen::VectorXd& obs) {
  const Matrix& raw = actor_.forward(obs);
  const neural::BetaParams params = neural::beta_from_raw(raw.col(0));
  smdp::OpDecision decision;
  decision.action = neural::beta_sample(params, rng_);
  decision.log_prob = neural::beta_log_prob(params, decision.action);
  return decision;
}

smdp::OpDecision OpAgent::act_mean(const Eigen::VectorXd& obs) {
  const Matrix& raw = actor_.forward(obs);
  const neural::BetaParams params = neural::beta_from_raw(raw.col(0));
  smdp::OpDecision decision;
  decision.action = neural::beta_mean(params);
  decision.log_prob = neural::beta_log_prob(params, decision.action);
  return decision;
}

void OpAgent::on_transition(const smdp::OpTransition& transition) {
  buffer_.push_back(transition);
  if (static_cast<int>(buffer_.size()) == hyper_.batch) update();
}

UpdateStats OpAgent::update() {
  const auto t_start = std::chrono::steady_clock::now();
  const int n = hyper_.batch;
  if (static_cast<int>(buffer_.size()) != n)
    throw std::logic_error("OpAgent::update: buffer not full");
  const int obs_dim = static_cast<int>(buffer_[0].obs.size());

  Matrix concat(obs_dim, 2 * n);
  Matrix obs(obs_dim, n);
  Matrix actions(action_dim_, n);
  Vector rewards(n), old_lp(n);
  for (int i = 0; i < n; ++i) {
    obs.col(i) = buffer_[i].obs;
    concat.col(i) = buffer_[i].obs;
    concat.col(n + i) = buffer_[i].next_obs;
    actions.col(i) = buffer_[i].action;
    rewards(i) = buffer_[i].reward;
    old_lp(i) = buffer_[i].log_prob;
  }

  UpdateStats out;

  // Values and advantages from the pre-update critic.
  {
    const Matrix& v = critic_.forward(concat);
    Vector values(n + 1);
    for (int i = 0; i < n; ++i) values(i) = v(0, i);
    values(n) = v(0, 2 * n - 1);
    Vector advantages = gae(rewards, values, hyper_.gamma, hyper_.gae_lambda);
    maybe_normalize(advantages, hyper_.normalize_advantages, out);

    for (int epoch = 0; epoch < hyper_.update_epochs; ++epoch) {
      const ObjectiveResult obj = beta_actor_objective(
          actor_, obs, actions, old_lp, advantages, hyper_.clip_eps,
          hyper_.entropy_coef, true);
      scale_grads(actor_.params(), -1.0);  // ascend on the surrogate
      actor_opt_.step(actor_.params());
      if (epoch == 0) {
        out.actor_loss = obj.value;
        out.ratio_mean = obj.ratio_mean;
      }
    }
  }

  for (int epoch = 0; epoch < hyper_.update_epochs; ++epoch) {
    const double loss =
        td_critic_objective(critic_, concat, rewards, hyper_.gamma, true);
    critic_opt_.step(critic_.params());
    if (epoch == 0) out.critic_loss = loss;
  }

  buffer_.clear();
  stats = out;
  has_stats = true;
  update_seconds_ +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return out;
}

// --- provider-level base -------------------------------------------------

void RpAgentBase::on_episode(const smdp::RpTransition& transition) {
  buffer_.push_back(transition);
  if (static_cast<int>(buffer_.size()) == hyper_.batch) update();
}

void RpAgentBase::require_full_buffer() const {
  if (static_cast<int>(buffer_.size()) != hyper_.batch)
    throw std::logic_error("provider update: buffer not full");
}

std::vector<Matrix> state_seq_batch(
    const std::vector<const smdp::RpState*>& states,
    const std::vector<Vector>& extra) {
  const int batch = static_cast<int>(states.size());
  const int width = static_cast<int>(states[0]->rows());
  const int steps = static_cast<int>(states[0]->cols());
  const int extra_width =
      extra.empty() ? 0 : static_cast<int>(extra[0].size());
  std::vector<Matrix> seq(steps, Matrix(width + extra_width, batch));
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      seq[t].col(b).head(width) = states[b]->col(t);
      if (extra_width > 0) seq[t].col(b).tail(extra_width) = extra[b];
    }
  }
  return seq;
}

Vector rp_advantages(neural::RecurrentNet& critic,
                     const std::vector<smdp::RpTransition>& buffer,
                     double gamma, double lambda,
                     std::vector<Matrix>& concat_seq_out) {
  const int n = static_cast<int>(buffer.size());
  std::vector<const smdp::RpState*> states;
  states.reserve(2 * n);
  for (const auto& tr : buffer) states.push_back(&tr.state);
  for (const auto& tr : buffer) states.push_back(&tr.next_state);
  concat_seq_out = state_seq_batch(states);

  const Matrix& v = critic.forward(concat_seq_out);
  Vector values(n + 1);
  for (int i = 0; i < n; ++i) values(i) = v(0, i);
  values(n) = v(0, 2 * n - 1);
  Vector rewards(n);
  for (int i = 0; i < n; ++i) rewards(i) = buffer[i].reward;
  return gae(rewards, values, gamma, lambda);
}

double rp_critic_epochs(neural::RecurrentNet& critic, neural::Adam& opt,
                        const std::vector<Matrix>& concat_seq,
                        const Vector& rewards, double gamma, int epochs) {
  double first_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double loss =
        td_critic_objective(critic, concat_seq, rewards, gamma, true);
    opt.step(critic.params());
    if (epoch == 0) first_loss = loss;
  }
  return first_loss;
}

// --- flat categorical provider agent --------------------------------------

RpAgentHppo::RpAgentHppo(int state_width, int num_ops, int num_ris,
                         int lstm_width, int hidden_width,
                         const HyperParams& hyper, RngStream rng)
    : RpAgentBase(hyper),
      num_ops_(num_ops),
      num_ris_(num_ris),
      rng_(rng),
      actor_(state_width, lstm_width, {hidden_width, hidden_width},
             static_cast<int>(smdp::goal_space(num_ops, num_ris)), 0.01, rng_,
             "rp_actor"),
      critic_(state_width, lstm_width, {hidden_width, hidden_width}, 1, 1.0,
              rng_, "rp_critic"),
      actor_opt_(hyper.lr_actor),
      critic_opt_(hyper.lr_critic) {
  buffer_.reserve(hyper.batch);
}

smdp::RpDecision RpAgentHppo::decide(const smdp::RpState& state, bool greedy) {
  const std::vector<Matrix> seq = state_seq_batch({&state});
  const Matrix& logits = actor_.forward(seq);
  const Vector col = logits.col(0);
  const int goal = greedy ? neural::argmax(col)
                          : neural::sample_categorical(col, rng_);
  smdp::RpDecision decision;
  decision.goal = goal;
  decision.alloc = smdp::decode_goal(goal, num_ops_, num_ris_);
  decision.log_prob = {neural::categorical_log_prob(col, goal)};
  return decision;
}

smdp::RpDecision RpAgentHppo::act(const smdp::RpState& state) {
  return decide(state, false);
}

smdp::RpDecision RpAgentHppo::act_greedy(const smdp::RpState& state) {
  return decide(state, true);
}

UpdateStats RpAgentHppo::update() {
  const auto t_start = std::chrono::steady_clock::now();
  require_full_buffer();
  const int n = hyper_.batch;

  std::vector<Matrix> concat_seq;
  Vector advantages = rp_advantages(critic_, buffer_, hyper_.gamma,
                                    hyper_.gae_lambda, concat_seq);
  UpdateStats out;
  maybe_normalize(advantages, hyper_.normalize_advantages, out);

  std::vector<const smdp::RpState*> states;
  states.reserve(n);
  for (const auto& tr : buffer_) states.push_back(&tr.state);
  const std::vector<Matrix> seq = state_seq_batch(states);

  Vector rewards(n), old_lp(n);
  std::vector<int> goals(n);
  for (int i = 0; i < n; ++i) {
    rewards(i) = buffer_[i].reward;
    old_lp(i) = buffer_[i].log_prob.at(0);
    goals[i] = static_cast<int>(buffer_[i].goal);
  }

  for (int epoch = 0; epoch < hyper_.update_epochs; ++epoch) {
    const ObjectiveResult obj = categorical_actor_objective(
        actor_, seq, goals, old_lp, advantages, hyper_.clip_eps,
        hyper_.entropy_coef, true);
    scale_grads(actor_.params(), -1.0);
    actor_opt_.step(actor_.params());
    if (epoch == 0) {
      out.actor_loss = obj.value;
      out.ratio_mean = obj.ratio_mean;
    }
  }

  out.critic_loss = rp_critic_epochs(critic_, critic_opt_, concat_seq, rewards,
                                     hyper_.gamma, hyper_.update_epochs);
  buffer_.clear();
  stats = out;
  has_stats = true;
  update_seconds_ +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return out;
}

// --- sequential provider agent ---------------------------------------------

RpAgentSeq::RpAgentSeq(int state_width, int num_ops, int num_ris,
                       int lstm_width, int hidden_width,
                       const HyperParams& hyper, RngStream rng)
    : RpAgentBase(hyper),
      num_ops_(num_ops),
      num_ris_(num_ris),
      rng_(rng),
      critic_(state_width, lstm_width, {hidden_width, hidden_width}, 1, 1.0,
              rng_, "rp_critic"),
      critic_opt_(hyper.lr_critic) {
  actors_.reserve(num_ris);
  for (int l = 0; l < num_ris; ++l) {
    actors_.emplace_back(state_width + l, lstm_width,
                         std::vector<int>{hidden_width, hidden_width}, num_ops,
                         0.01, rng_, "rp_actor" + std::to_string(l));
    actor_opts_.emplace_back(hyper.lr_actor);
  }
  buffer_.reserve(hyper.batch);
}

smdp::RpDecision RpAgentSeq::decide(const smdp::RpState& state, bool greedy) {
  smdp::RpDecision decision;
  decision.alloc.owner.resize(num_ris_);
  decision.log_prob.resize(num_ris_);
  Vector chosen(num_ris_);
  for (int l = 0; l < num_ris_; ++l) {
    const std::vector<Vector> extra{chosen.head(l)};
    const std::vector<Matrix> seq = state_seq_batch({&state}, extra);
    const Matrix& logits = actors_[l].forward(seq);
    const Vector col = logits.col(0);
    const int sub_goal = greedy ? neural::argmax(col)
                                : neural::sample_categorical(col, rng_);
    decision.alloc.owner[l] = sub_goal + 1;
    decision.log_prob[l] = neural::categorical_log_prob(col, sub_goal);
    chosen(l) = static_cast<double>(sub_goal + 1) / num_ops_;
  }
  decision.goal = smdp::encode_goal(decision.alloc, num_ops_);
  return decision;
}

smdp::RpDecision RpAgentSeq::act(const smdp::RpState& state) {
  return decide(state, false);
}

smdp::RpDecision RpAgentSeq::act_greedy(const smdp::RpState& state) {
  return decide(state, true);
}

std::vector<neural::ParamBlock*> RpAgentSeq::actor_params() {
  std::vector<neural::ParamBlock*> blocks;
  for (auto& actor : actors_)
    for (neural::ParamBlock* block : actor.params()) blocks.push_back(block);
  return blocks;
}

UpdateStats RpAgentSeq::update() {
  const auto t_start = std::chrono::steady_clock::now();
  require_full_buffer();
  const int n = hyper_.batch;

  std::vector<Matrix> concat_seq;
  Vector advantages = rp_advantages(critic_, buffer_, hyper_.gamma,
                                    hyper_.gae_lambda, concat_seq);
  UpdateStats out;
  maybe_normalize(advantages, hyper_.normalize_advantages, out);

  Vector rewards(n);
  std::vector<env::RisAllocation> owners(n);
  for (int i = 0; i < n; ++i) {
    rewards(i) = buffer_[i].reward;
    owners[i] = smdp::decode_goal(buffer_[i].goal, num_ops_, num_ris_);
  }

  std::vector<const smdp::RpState*> states;
  states.reserve(n);
  for (const auto& tr : buffer_) states.push_back(&tr.state);

  for (int epoch = 0; epoch < hyper_.update_epochs; ++epoch) {
    double loss_total = 0.0;
    double ratio_total = 0.0;
    for (int l = 0; l < num_ris_; ++l) {
      std::vector<Vector> extra(n);
      std::vector<int> choices(n);
      Vector old_lp(n);
      for (int i = 0; i < n; ++i) {
        extra[i].resize(l);
        for (int j = 0; j < l; ++j)
          extra[i](j) = static_cast<double>(owners[i].owner[j]) / num_ops_;
        choices[i] = owners[i].owner[l] - 1;
        old_lp(i) = buffer_[i].log_prob.at(l);
      }
      const std::vector<Matrix> seq = state_seq_batch(states, extra);
      const ObjectiveResult obj = categorical_actor_objective(
          actors_[l], seq, choices, old_lp, advantages, hyper_.clip_eps,
          hyper_.entropy_coef, true);
      scale_grads(actors_[l].params(), -1.0);
      actor_opts_[l].step(actors_[l].params());
      loss_total += obj.value;
      ratio_total += obj.ratio_mean;
    }
    if (epoch == 0) {
      out.actor_loss = loss_total;
      out.ratio_mean = ratio_total / num_ris_;
    }
  }

  out.critic_loss = rp_critic_epochs(critic_, critic_opt_, concat_seq, rewards,
                                     hyper_.gamma, hyper_.update_epochs);
  buffer_.clear();
  stats = out;
  has_stats = true;
  update_seconds_ +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return out;
}

}  // namespace hdrl::ppo
