#pragma once

#include "rlgan/autoencoder.hpp"
#include "rlgan/checkpoint.hpp"
#include "rlgan/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace rlgan {

struct GANConfig {
  std::size_t latent_dim = 1;
  std::vector<std::size_t> generator_hidden{64, 128};
  std::vector<std::size_t> critic_hidden{128, 64};
  double lambda_gp = 10.0;
  std::size_t n_critic = 5;
  nn::AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
  std::size_t batch_size = 50;
  std::size_t iterations = 20000;  // generator updates
  std::size_t log_every = 100;
  std::size_t gap_probe_steps = 1000;  // critic steps per gap estimate, 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// Generator z -> GFV and WGAN critic GFV -> unbounded score.
class LatentGan {
 public:
  explicit LatentGan(const GANConfig& config);

  const GANConfig& config() const { return config_; }

  Gfv generate(const Eigen::VectorXf& z) const;
  nn::Matrix<float> generate_batch(const nn::Matrix<float>& z) const;
  float discriminate(const Gfv& gfv) const;
  /// One score per row.
  Eigen::VectorXf discriminate_batch(const nn::Matrix<float>& gfvs) const;

  nn::Sequential<float>& generator() { return generator_; }
  nn::Sequential<float>& critic() { return critic_; }
  const nn::Sequential<float>& generator() const { return generator_; }
  const nn::Sequential<float>& critic() const { return critic_; }

  void freeze();
  bool frozen() const { return generator_.frozen() && critic_.frozen(); }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  GANConfig config_;
  nn::Sequential<float> generator_{"generator"};
  nn::Sequential<float> critic_{"critic"};
};

/// λ · mean_b (‖∇ D(x̂_b)‖₂ − 1)² with x̂_b = ε_b·real_b + (1 − ε_b)·fake_b.
///
/// When `accumulate` is set, the gradient of the penalty w.r.t. the critic's
/// weights is added to their grads (ReLU masks held fixed, so biases receive
/// none). The critic must consist of dense and ReLU layers only.
template <typename T>
T gradient_penalty(nn::Sequential<T>& critic, const nn::Matrix<T>& real, const nn::Matrix<T>& fake,
                   const Eigen::Matrix<T, Eigen::Dynamic, 1>& epsilon, T lambda, bool accumulate);

struct GanLogRow {
  std::size_t iteration;
  double d_real;
  double d_fake;
  double gp;
};

struct GanTrainResult {
  std::vector<GanLogRow> history;  // row 0 is the untrained state
  std::size_t generator_steps = 0;
  std::size_t critic_steps = 0;
  double initial_gap = 0.0;  // estimate_gap of the untrained generator
  double final_gap = 0.0;    // estimate_gap of the trained generator
};

/// Evenly spaced latent codes covering [-1, 1] (first coordinate), used for
/// reproducible score snapshots.
nn::Matrix<float> latent_grid(std::size_t count, std::size_t latent_dim);

/// |mean D(real) - mean D(G(z))| over the given real GFVs and latent codes.
double critic_gap(const LatentGan& gan, const nn::Matrix<float>& real, const nn::Matrix<float>& z);

/// Trains a freshly initialized critic (seed derived from the GAN's) for
/// `steps` WGAN-GP steps against the frozen generator and returns its
/// critic_gap. The same probe critic init is used on every call, so estimates
/// of two generators are comparable.
double estimate_gap(const LatentGan& gan, const nn::Matrix<float>& real_gfvs, std::size_t steps);

using GanLogCallback = std::function<void(const GanLogRow&)>;

/// WGAN-GP: n_critic critic updates per generator update, z ~ U[-1, 1].
GanTrainResult train_gan(LatentGan& gan, const nn::Matrix<float>& real_gfvs, const GanLogCallback& on_log = {});

}  // namespace rlgan
