#pragma once

#include "rlgan/autoencoder.hpp"
#include "rlgan/checkpoint.hpp"
#include "rlgan/geometry.hpp"
#include "rlgan/latent_gan.hpp"
#include "rlgan/nn.hpp"
#include "rlgan/random.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace rlgan {

class ConfigurationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Reward

struct RewardWeights {
  double chamfer = 100.0;
  double gfv = 10.0;
  double discriminator = 0.01;
};

struct RewardBreakdown {
  double reward = 0.0;
  double chamfer_loss = 0.0;  // L_CH, per-point normalized
  double gfv_loss = 0.0;      // L_GFV = ||G(z) - E(P_in)||^2
  double d_score = 0.0;       // D(G(z)); L_D = -d_score
};

/// r = -w_CH·L_CH - w_GFV·L_GFV + w_D·D(G(z)).
RewardBreakdown combine_reward(double chamfer_loss, double gfv_loss, double d_score, const RewardWeights& weights);

// ---------------------------------------------------------------------------
// Environment

struct Transition {
  Gfv state;
  Eigen::VectorXf action;
  double reward = 0.0;
  Gfv next_state;
  bool done = true;
};

/// Single-step episodes over frozen encoder, decoder, generator and critic.
class Environment {
 public:
  /// Throws ConfigurationError unless both models are frozen.
  Environment(const AutoEncoder& ae, const LatentGan& gan, RewardWeights weights = {});

  struct StepResult {
    Transition transition;
    PointCloud output;
    RewardBreakdown reward;
  };

  /// s = E(P_in).
  Gfv observe(const PointCloud& partial) const;
  RewardBreakdown compute_reward(const PointCloud& partial, const Gfv& state, const Eigen::VectorXf& z) const;
  StepResult step(const PointCloud& partial, const Eigen::VectorXf& action) const;
  /// As step(), reusing a state already observed for `partial`.
  StepResult step(const PointCloud& partial, const Gfv& state, const Eigen::VectorXf& action) const;

  const AutoEncoder& autoencoder() const { return ae_; }
  const LatentGan& gan() const { return gan_; }
  const RewardWeights& weights() const { return weights_; }
  std::size_t action_dim() const { return gan_.config().latent_dim; }

 private:
  const AutoEncoder& ae_;
  const LatentGan& gan_;
  RewardWeights weights_;
};

// ---------------------------------------------------------------------------
// Replay buffer

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  /// Overwrites the oldest transition once full.
  void push(Transition t);
  /// Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> items_;
};

// ---------------------------------------------------------------------------
// Networks

/// Q(s, a): the state passes through one dense+ReLU layer, the action is
/// concatenated, then a dense/ReLU stack ends in a scalar head.
template <typename T>
class QNetwork {
 public:
  QNetwork(std::string name, std::size_t state_dim, std::size_t action_dim, std::size_t state_width,
           const std::vector<std::size_t>& hidden)
      : trunk_(name + ".trunk"), head_(name + ".head"), state_width_(state_width), action_dim_(action_dim) {
    trunk_.dense(state_dim, state_width).relu();
    std::size_t in = state_width + action_dim;
    for (std::size_t w : hidden) {
      head_.dense(in, w).relu();
      in = w;
    }
    head_.dense(in, 1);
  }

  template <typename Engine>
  void init(Engine& rng) {
    trunk_.init(rng);
    head_.init(rng);
  }

  nn::Matrix<T> forward(const nn::Matrix<T>& states, const nn::Matrix<T>& actions) {
    return head_.forward(join(trunk_.forward(states), actions));
  }
  nn::Matrix<T> predict(const nn::Matrix<T>& states, const nn::Matrix<T>& actions) const {
    return head_.predict(join(trunk_.predict(states), actions));
  }

  struct InputGrads {
    nn::Matrix<T> states;
    nn::Matrix<T> actions;
  };
  /// Accumulates parameter gradients of the last forward.
  InputGrads backward(const nn::Matrix<T>& upstream) {
    const nn::Matrix<T> joined = head_.backward(upstream);
    InputGrads g;
    g.actions = joined.rightCols(static_cast<Eigen::Index>(action_dim_));
    g.states = trunk_.backward(joined.leftCols(static_cast<Eigen::Index>(state_width_)));
    return g;
  }
  /// dQ/da of the last forward, scaled by `upstream`; parameters untouched.
  nn::Matrix<T> action_gradient(const nn::Matrix<T>& upstream) {
    return head_.input_gradient(upstream).rightCols(static_cast<Eigen::Index>(action_dim_));
  }

  void zero_grad() {
    trunk_.zero_grad();
    head_.zero_grad();
  }
  std::vector<nn::Param<T>*> params() {
    auto p = trunk_.params();
    for (auto* q : head_.params()) p.push_back(q);
    return p;
  }
  void soft_update_from(const QNetwork& src, T tau) {
    trunk_.soft_update_from(src.trunk_, tau);
    head_.soft_update_from(src.head_, tau);
  }

  nn::Sequential<T>& trunk() { return trunk_; }
  nn::Sequential<T>& head() { return head_; }
  const nn::Sequential<T>& trunk() const { return trunk_; }
  const nn::Sequential<T>& head() const { return head_; }

  template <typename U>
  QNetwork<U> cast() const {
    QNetwork<U> out(*this, trunk_.template cast<U>(), head_.template cast<U>());
    return out;
  }

  template <typename>
  friend class QNetwork;

 private:
  template <typename U>
  QNetwork(const QNetwork<U>& shape, nn::Sequential<T> trunk, nn::Sequential<T> head)
      : trunk_(std::move(trunk)), head_(std::move(head)), state_width_(shape.state_width_),
        action_dim_(shape.action_dim_) {}

  nn::Matrix<T> join(const nn::Matrix<T>& h, const nn::Matrix<T>& actions) const {
    if (actions.rows() != h.rows() || static_cast<std::size_t>(actions.cols()) != action_dim_) {
      throw nn::ShapeError("critic: actions " + nn::shape_string(actions.rows(), actions.cols()) +
                           " do not match states batch of " + std::to_string(h.rows()));
    }
    nn::Matrix<T> x(h.rows(), h.cols() + actions.cols());
    x << h, actions;
    return x;
  }

  nn::Sequential<T> trunk_;
  nn::Sequential<T> head_;
  std::size_t state_width_;
  std::size_t action_dim_;
};

struct DDPGConfig {
  std::size_t max_steps = 6000;
  std::size_t warmup_steps = 1000;
  double exploration_noise = 0.1;
  std::size_t batch_size = 100;
  double gamma = 0.9;
  double tau = 0.005;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  std::size_t policy_delay = 2;
  std::size_t replay_capacity = 1000000;
  std::size_t eval_every = 500;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::vector<std::size_t> actor_hidden{400, 400, 300};
  std::size_t critic_state_width = 400;
  std::vector<std::size_t> critic_hidden{432, 300, 300};
  std::uint64_t seed = 0;

  void validate() const;
};

struct UpdateStats {
  double critic_loss = 0.0;
  std::optional<double> actor_loss;
  /// max |y - r| over the batch; zero whenever every transition is terminal.
  double max_bootstrap = 0.0;
};

/// Actor-critic agent with twin critics, target policy smoothing and delayed
/// actor updates.
class Agent {
 public:
  Agent(const DDPGConfig& config, std::size_t state_dim, std::size_t action_dim);
  // Optimizers hold pointers into the networks.
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const DDPGConfig& config() const { return config_; }

  /// Deterministic policy output in [-1, 1].
  Eigen::VectorXf act(const Gfv& state) const;
  nn::Matrix<float> act_batch(const nn::Matrix<float>& states) const;

  /// Uniform random before the warm-up ends; afterwards the policy output,
  /// plus N(0, sigma) noise when exploring, clipped to [-1, 1].
  Eigen::VectorXf select_action(const Gfv& state, std::size_t step, bool explore, double sigma);

  UpdateStats update(const ReplayBuffer& replay);
  /// One deterministic policy-gradient step on the actor against critic 1;
  /// returns the actor loss -mean Q1(s, mu(s)) before the step.
  double actor_step(const nn::Matrix<float>& states);

  nn::Sequential<float>& actor() { return actor_; }
  const nn::Sequential<float>& actor() const { return actor_; }
  nn::Sequential<float>& actor_target() { return actor_target_; }
  QNetwork<float>& critic(std::size_t i) { return i == 0 ? critic1_ : critic2_; }
  QNetwork<float>& critic_target(std::size_t i) { return i == 0 ? critic1_target_ : critic2_target_; }

  std::size_t critic_updates() const { return critic_updates_; }
  std::size_t actor_updates() const { return actor_updates_; }
  Rng& rng() { return rng_; }

  void save(Checkpoint& ckpt) const;
  /// Restores the actor (and critics/targets when present in the checkpoint).
  void load(const Checkpoint& ckpt);

 private:
  DDPGConfig config_;
  std::size_t action_dim_;
  nn::Sequential<float> actor_;
  nn::Sequential<float> actor_target_;
  QNetwork<float> critic1_;
  QNetwork<float> critic2_;
  QNetwork<float> critic1_target_;
  QNetwork<float> critic2_target_;
  nn::Adam<float> actor_opt_;
  nn::Adam<float> critic_opt_;
  std::size_t critic_updates_ = 0;
  std::size_t actor_updates_ = 0;
  Rng rng_;
};

nn::Sequential<float> build_actor(const std::string& name, std::size_t state_dim, std::size_t action_dim,
                                  const std::vector<std::size_t>& hidden);

// ---------------------------------------------------------------------------
// Training

struct Episode {
  PointCloud partial;
  Gfv state;
};

/// Pairs every partial cloud with its encoder state.
std::vector<Episode> make_episodes(const Environment& env, std::span<const PointCloud> partials);

struct AgentLogRow {
  std::size_t step;
  RewardBreakdown reward;
};

struct EvalRow {
  std::size_t step;
  double mean_reward;
};

struct AgentTrainResult {
  std::vector<AgentLogRow> history;
  std::vector<EvalRow> evaluations;
};

double evaluate_policy(const Agent& agent, const Environment& env, std::span<const Episode> episodes);
/// Mean reward of uniformly random actions, one per episode.
double evaluate_random_policy(const Environment& env, std::span<const Episode> episodes, std::uint64_t seed);

using AgentLogCallback = std::function<void(const AgentLogRow&)>;

/// Collects one transition per step from a uniformly drawn training episode
/// and trains from the replay buffer after every step. Evaluates the
/// deterministic policy on `eval` every `eval_every` steps and at the end.
AgentTrainResult train_agent(Agent& agent, const Environment& env, std::span<const Episode> train,
                             std::span<const Episode> eval, const AgentLogCallback& on_step = {});

}  // namespace rlgan
