#include "rlgan/agent.hpp"

#include <algorithm>
#include <cmath>

namespace rlgan {

RewardBreakdown combine_reward(double chamfer_loss, double gfv_loss, double d_score, const RewardWeights& w) {
  RewardBreakdown r;
  r.chamfer_loss = chamfer_loss;
  r.gfv_loss = gfv_loss;
  r.d_score = d_score;
  r.reward = -w.chamfer * chamfer_loss - w.gfv * gfv_loss + w.discriminator * d_score;
  return r;
}

// ---------------------------------------------------------------------------

Environment::Environment(const AutoEncoder& ae, const LatentGan& gan, RewardWeights weights)
    : ae_(ae), gan_(gan), weights_(weights) {
  if (!ae.frozen()) throw ConfigurationError("environment requires a frozen autoencoder");
  if (!gan.frozen()) throw ConfigurationError("environment requires a frozen GAN");
}

Gfv Environment::observe(const PointCloud& partial) const { return ae_.encode(partial); }

namespace {

void check_action(const Eigen::VectorXf& z, std::size_t dim) {
  if (static_cast<std::size_t>(z.size()) != dim) {
    throw nn::ShapeError("action has " + std::to_string(z.size()) + " components, expected " + std::to_string(dim));
  }
  if (!z.allFinite()) throw std::domain_error("action contains a non-finite value");
}

}  // namespace

RewardBreakdown Environment::compute_reward(const PointCloud& partial, const Gfv& state,
                                            const Eigen::VectorXf& z) const {
  return step(partial, state, z).reward;
}

Environment::StepResult Environment::step(const PointCloud& partial, const Eigen::VectorXf& action) const {
  return step(partial, observe(partial), action);
}

Environment::StepResult Environment::step(const PointCloud& partial, const Gfv& state,
                                          const Eigen::VectorXf& action) const {
  check_action(action, action_dim());
  if (static_cast<std::size_t>(state.size()) != kGfvDim) throw nn::ShapeError("state must be a 128-dim GFV");

  const Gfv gfv = gan_.generate(action);
  StepResult out{{}, ae_.decode(gfv), {}};
  const double l_ch = chamfer_normalized(partial, out.output);
  const double l_gfv = (gfv - state).cast<double>().squaredNorm();
  const double d = gan_.discriminate(gfv);
  out.reward = combine_reward(l_ch, l_gfv, d, weights_);

  out.transition.state = state;
  out.transition.action = action;
  out.transition.reward = out.reward.reward;
  out.transition.next_state = gfv;
  out.transition.done = true;
  return out;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

// ---------------------------------------------------------------------------

void DDPGConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("agent batch size must be positive");
  if (policy_delay == 0) throw std::invalid_argument("policy delay must be at least 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0, 1]");
  if (exploration_noise < 0.0 || policy_noise < 0.0 || noise_clip < 0.0) {
    throw std::invalid_argument("noise scales must be non-negative");
  }
  if (replay_capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

nn::Sequential<float> build_actor(const std::string& name, std::size_t state_dim, std::size_t action_dim,
                                  const std::vector<std::size_t>& hidden) {
  nn::Sequential<float> net(name);
  std::size_t in = state_dim;
  for (std::size_t w : hidden) {
    net.dense(in, w).relu();
    in = w;
  }
  net.dense(in, action_dim).tanh();
  return net;
}

namespace {

std::vector<nn::Param<float>*> joined(QNetwork<float>& a, QNetwork<float>& b) {
  auto p = a.params();
  for (auto* q : b.params()) p.push_back(q);
  return p;
}

const DDPGConfig& validated(const DDPGConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Agent::Agent(const DDPGConfig& config, std::size_t state_dim, std::size_t action_dim)
    : config_(validated(config)),
      action_dim_(action_dim),
      actor_(build_actor("actor", state_dim, action_dim, config.actor_hidden)),
      actor_target_(build_actor("actor_target", state_dim, action_dim, config.actor_hidden)),
      critic1_("critic1", state_dim, action_dim, config.critic_state_width, config.critic_hidden),
      critic2_("critic2", state_dim, action_dim, config.critic_state_width, config.critic_hidden),
      critic1_target_("critic1_target", state_dim, action_dim, config.critic_state_width, config.critic_hidden),
      critic2_target_("critic2_target", state_dim, action_dim, config.critic_state_width, config.critic_hidden),
      actor_opt_(actor_.params(), {config.actor_lr, 0.9, 0.999, 1e-8}),
      critic_opt_(joined(critic1_, critic2_), {config.critic_lr, 0.9, 0.999, 1e-8}),
      rng_(derive_seed(config.seed, "agent")) {
  if (action_dim == 0 || state_dim == 0) throw std::invalid_argument("agent dimensions must be positive");
  Rng init(derive_seed(config.seed, "agent-init"));
  actor_.init(init);
  critic1_.init(init);
  critic2_.init(init);
  nn::copy_values(actor_, actor_target_);
  critic1_target_.soft_update_from(critic1_, 1.0f);
  critic2_target_.soft_update_from(critic2_, 1.0f);
}

Eigen::VectorXf Agent::act(const Gfv& state) const { return act_batch(state.transpose()).row(0).transpose(); }

nn::Matrix<float> Agent::act_batch(const nn::Matrix<float>& states) const { return actor_.predict(states); }

Eigen::VectorXf Agent::select_action(const Gfv& state, std::size_t step, bool explore, double sigma) {
  if (step < config_.warmup_steps && explore) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Eigen::VectorXf a(static_cast<Eigen::Index>(action_dim_));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = u(rng_);
    return a;
  }
  Eigen::VectorXf a = act(state);
  if (explore && sigma > 0.0) {
    std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += noise(rng_);
  }
  return a.cwiseMax(-1.0f).cwiseMin(1.0f);
}

UpdateStats Agent::update(const ReplayBuffer& replay) {
  const auto batch = replay.sample(config_.batch_size, rng_);
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto S = static_cast<Eigen::Index>(batch.front()->state.size());
  const auto A = static_cast<Eigen::Index>(action_dim_);

  nn::Matrix<float> states(B, S), next_states(B, S), actions(B, A);
  Eigen::VectorXd rewards(B), not_done(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Transition& t = *batch[static_cast<std::size_t>(b)];
    states.row(b) = t.state.transpose();
    next_states.row(b) = t.next_state.transpose();
    actions.row(b) = t.action.transpose();
    rewards(b) = t.reward;
    not_done(b) = t.done ? 0.0 : 1.0;
  }

  // Target with clipped policy-smoothing noise and the smaller twin estimate.
  std::normal_distribution<float> noise(0.0f, static_cast<float>(config_.policy_noise));
  const float clip = static_cast<float>(config_.noise_clip);
  nn::Matrix<float> next_actions = actor_target_.predict(next_states);
  for (Eigen::Index i = 0; i < next_actions.size(); ++i) {
    const float e = std::clamp(noise(rng_), -clip, clip);
    next_actions.data()[i] = std::clamp(next_actions.data()[i] + e, -1.0f, 1.0f);
  }
  const nn::Matrix<float> q1_next = critic1_target_.predict(next_states, next_actions);
  const nn::Matrix<float> q2_next = critic2_target_.predict(next_states, next_actions);

  UpdateStats stats;
  Eigen::VectorXd target(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double q_next = std::min(q1_next(b, 0), q2_next(b, 0));
    const double boot = not_done(b) == 0.0 ? 0.0 : config_.gamma * q_next;
    target(b) = rewards(b) + boot;
    stats.max_bootstrap = std::max(stats.max_bootstrap, std::abs(target(b) - rewards(b)));
  }

  critic1_.zero_grad();
  critic2_.zero_grad();
  double loss = 0.0;
  for (QNetwork<float>* q : {&critic1_, &critic2_}) {
    const nn::Matrix<float> pred = q->forward(states, actions);
    nn::Matrix<float> grad(B, 1);
    for (Eigen::Index b = 0; b < B; ++b) {
      const double diff = static_cast<double>(pred(b, 0)) - target(b);
      loss += diff * diff / static_cast<double>(B);
      grad(b, 0) = static_cast<float>(2.0 * diff / static_cast<double>(B));
    }
    q->backward(grad);
  }
  critic_opt_.step();
  ++critic_updates_;
  stats.critic_loss = loss;

  if (critic_updates_ % config_.policy_delay == 0) {
    stats.actor_loss = actor_step(states);

    const auto tau = static_cast<float>(config_.tau);
    actor_target_.soft_update_from(actor_, tau);
    critic1_target_.soft_update_from(critic1_, tau);
    critic2_target_.soft_update_from(critic2_, tau);
  }
  return stats;
}

double Agent::actor_step(const nn::Matrix<float>& states) {
  // Ascend Q1(s, mu(s)).
  const auto B = states.rows();
  actor_.zero_grad();
  const nn::Matrix<float> mu = actor_.forward(states);
  const nn::Matrix<float> q = critic1_.forward(states, mu);
  const nn::Matrix<float> upstream = nn::Matrix<float>::Constant(B, 1, -1.0f / static_cast<float>(B));
  actor_.backward(critic1_.action_gradient(upstream));
  actor_opt_.step();
  ++actor_updates_;
  return -q.cast<double>().mean();
}

void Agent::save(Checkpoint& ckpt) const {
  ckpt.add(actor_);
  ckpt.add(actor_target_);
  for (const QNetwork<float>* q : {&critic1_, &critic2_, &critic1_target_, &critic2_target_}) {
    ckpt.add(q->trunk());
    ckpt.add(q->head());
  }
}

void Agent::load(const Checkpoint& ckpt) {
  ckpt.restore(actor_);
  if (ckpt.contains("actor_target.0.weight")) {
    ckpt.restore(actor_target_);
  } else {
    nn::copy_values(actor_, actor_target_);
  }
  for (QNetwork<float>* q : {&critic1_, &critic2_, &critic1_target_, &critic2_target_}) {
    if (!ckpt.contains(q->trunk().name() + ".0.weight")) continue;
    ckpt.restore(q->trunk());
    ckpt.restore(q->head());
  }
}

// ---------------------------------------------------------------------------

std::vector<Episode> make_episodes(const Environment& env, std::span<const PointCloud> partials) {
  std::vector<Episode> out;
  out.reserve(partials.size());
  if (partials.empty()) return out;
  const nn::Matrix<float> states = env.autoencoder().encode_batch(partials);
  for (std::size_t i = 0; i < partials.size(); ++i) {
    out.push_back({partials[i], states.row(static_cast<Eigen::Index>(i)).transpose()});
  }
  return out;
}

double evaluate_policy(const Agent& agent, const Environment& env, std::span<const Episode> episodes) {
  if (episodes.empty()) throw std::invalid_argument("evaluate_policy: no episodes");
  double sum = 0.0;
  for (const Episode& ep : episodes) sum += env.step(ep.partial, ep.state, agent.act(ep.state)).reward.reward;
  return sum / static_cast<double>(episodes.size());
}

double evaluate_random_policy(const Environment& env, std::span<const Episode> episodes, std::uint64_t seed) {
  if (episodes.empty()) throw std::invalid_argument("evaluate_random_policy: no episodes");
  Rng rng(derive_seed(seed, "random-policy"));
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  double sum = 0.0;
  Eigen::VectorXf a(static_cast<Eigen::Index>(env.action_dim()));
  for (const Episode& ep : episodes) {
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = u(rng);
    sum += env.step(ep.partial, ep.state, a).reward.reward;
  }
  return sum / static_cast<double>(episodes.size());
}

AgentTrainResult train_agent(Agent& agent, const Environment& env, std::span<const Episode> train,
                             std::span<const Episode> eval, const AgentLogCallback& on_step) {
  if (train.empty()) throw std::invalid_argument("train_agent: no training episodes");
  const DDPGConfig& cfg = agent.config();
  ReplayBuffer replay(cfg.replay_capacity);
  Rng episodes(derive_seed(cfg.seed, "agent-episodes"));
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);

  AgentTrainResult result;
  result.history.reserve(cfg.max_steps);
  auto evaluate = [&](std::size_t step) {
    if (!eval.empty()) result.evaluations.push_back({step, evaluate_policy(agent, env, eval)});
  };

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const Episode& ep = train[pick(episodes)];
    const Eigen::VectorXf action = agent.select_action(ep.state, step, true, cfg.exploration_noise);
    auto res = env.step(ep.partial, ep.state, action);
    replay.push(std::move(res.transition));

    AgentLogRow row{step + 1, res.reward};
    result.history.push_back(row);
    if (on_step) on_step(row);

    if (step >= cfg.warmup_steps) agent.update(replay);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) evaluate(step + 1);
  }
  if (result.evaluations.empty() || result.evaluations.back().step != cfg.max_steps) evaluate(cfg.max_steps);
  return result;
}

}  // namespace rlgan
