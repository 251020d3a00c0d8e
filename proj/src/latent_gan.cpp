#include "rlgan/latent_gan.hpp"

#include "rlgan/random.hpp"

#include <cmath>

namespace rlgan {

void GANConfig::validate() const {
  if (latent_dim == 0) throw std::invalid_argument("latent dimension must be positive");
  if (!(lambda_gp > 0.0)) throw std::invalid_argument("lambda_gp must be positive");
  if (n_critic < 1) throw std::invalid_argument("n_critic must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("GAN batch size must be positive");
}

namespace {

// Unit-norm first-layer rows with ReLU kinks at uniform points of [-1, 1]^d,
// instead of every kink sitting at z = 0.
void spread_first_layer(nn::Sequential<float>& gen, Rng& rng) {
  auto& layer = gen.layers().front();
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<float> unit(-1.0f, 1.0f);
  for (Eigen::Index r = 0; r < layer.weight.value.rows(); ++r) {
    Eigen::RowVectorXf w(layer.weight.value.cols());
    for (Eigen::Index c = 0; c < w.size(); ++c) w(c) = normal(rng);
    w /= w.norm();
    Eigen::RowVectorXf knot(w.size());
    for (Eigen::Index c = 0; c < w.size(); ++c) knot(c) = unit(rng);
    layer.weight.value.row(r) = w;
    layer.bias.value(0, r) = -w.dot(knot);
  }
}

}  // namespace

LatentGan::LatentGan(const GANConfig& config) : config_(config) {
  config_.validate();
  std::size_t in = config_.latent_dim;
  for (std::size_t w : config_.generator_hidden) {
    generator_.dense(in, w).relu();
    in = w;
  }
  generator_.dense(in, kGfvDim);

  in = kGfvDim;
  for (std::size_t w : config_.critic_hidden) {
    critic_.dense(in, w).relu();
    in = w;
  }
  critic_.dense(in, 1);

  Rng rng(derive_seed(config_.seed, "gan-init"));
  generator_.init(rng);
  critic_.init(rng);
  spread_first_layer(generator_, rng);
}

Gfv LatentGan::generate(const Eigen::VectorXf& z) const {
  if (static_cast<std::size_t>(z.size()) != config_.latent_dim) {
    throw nn::ShapeError("generate expects a " + std::to_string(config_.latent_dim) + "-dim seed, got " +
                         std::to_string(z.size()));
  }
  return generate_batch(z.transpose()).row(0).transpose();
}

nn::Matrix<float> LatentGan::generate_batch(const nn::Matrix<float>& z) const {
  if (static_cast<std::size_t>(z.cols()) != config_.latent_dim) {
    throw nn::ShapeError("generate: seeds " + nn::shape_string(z.rows(), z.cols()) + " but latent dim is " +
                         std::to_string(config_.latent_dim));
  }
  return generator_.predict(z);
}

float LatentGan::discriminate(const Gfv& gfv) const {
  if (static_cast<std::size_t>(gfv.size()) != kGfvDim) {
    throw nn::ShapeError("discriminate expects a 128-dim GFV, got " + std::to_string(gfv.size()));
  }
  return discriminate_batch(gfv.transpose())(0);
}

Eigen::VectorXf LatentGan::discriminate_batch(const nn::Matrix<float>& gfvs) const {
  if (!gfvs.allFinite()) throw std::domain_error("discriminate: GFV contains a non-finite value");
  // Row by row, so a score is independent of the batch it arrives in.
  Eigen::VectorXf scores(gfvs.rows());
  for (Eigen::Index r = 0; r < gfvs.rows(); ++r) {
    const nn::Matrix<float> row = gfvs.row(r);
    scores(r) = critic_.predict(row)(0, 0);
  }
  return scores;
}

void LatentGan::freeze() {
  generator_.freeze();
  critic_.freeze();
}

void LatentGan::save(Checkpoint& ckpt) const {
  ckpt.add(generator_);
  ckpt.add(critic_);
}

void LatentGan::load(const Checkpoint& ckpt) {
  ckpt.restore(generator_);
  ckpt.restore(critic_);
}

// ---------------------------------------------------------------------------

template <typename T>
T gradient_penalty(nn::Sequential<T>& critic, const nn::Matrix<T>& real, const nn::Matrix<T>& fake,
                   const Eigen::Matrix<T, Eigen::Dynamic, 1>& epsilon, T lambda, bool accumulate) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols()) {
    throw nn::ShapeError("gradient penalty: real batch " + nn::shape_string(real.rows(), real.cols()) +
                         " vs fake batch " + nn::shape_string(fake.rows(), fake.cols()));
  }
  if (epsilon.size() != real.rows()) throw nn::ShapeError("gradient penalty: one epsilon per sample required");
  if (accumulate && critic.frozen()) throw nn::FrozenError("gradient penalty update on a frozen critic");

  const Eigen::Index batch = real.rows();
  nn::Matrix<T> mixed = fake;
  for (Eigen::Index b = 0; b < batch; ++b) {
    mixed.row(b) = epsilon(b) * real.row(b) + (T(1) - epsilon(b)) * fake.row(b);
  }
  critic.forward(mixed);

  // Backward chain of dD/dx with the output seed fixed at 1. deltas[k] is the
  // gradient w.r.t. the input of layer k.
  const auto& layers = critic.layers();
  const std::size_t n = layers.size();
  std::vector<nn::Matrix<T>> deltas(n + 1);
  deltas[n] = nn::Matrix<T>::Ones(batch, 1);
  for (std::size_t k = n; k-- > 0;) {
    const auto& layer = layers[k];
    switch (layer.kind) {
      case nn::LayerKind::dense:
      case nn::LayerKind::pointwise_conv: deltas[k] = deltas[k + 1] * layer.weight.value; break;
      case nn::LayerKind::relu:
        deltas[k] = (critic.activation(k + 1).array() > T(0)).select(deltas[k + 1], T(0));
        break;
      default: throw std::invalid_argument("gradient penalty supports dense/relu critics only");
    }
  }
  if (deltas[n].cols() != 1) throw nn::ShapeError("gradient penalty needs a scalar critic");

  const nn::Matrix<T>& grad_x = deltas[0];
  const Eigen::Matrix<T, Eigen::Dynamic, 1> norms = grad_x.rowwise().norm();
  const T value = lambda * (norms.array() - T(1)).square().mean();
  if (!accumulate) return value;

  // Adjoint of the backward chain: zeta is dP/d(deltas[k]).
  nn::Matrix<T> zeta(batch, grad_x.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const T norm = norms(b);
    const T scale = norm > T(0) ? lambda * T(2) * (norm - T(1)) / (norm * static_cast<T>(batch)) : T(0);
    zeta.row(b) = scale * grad_x.row(b);
  }
  auto& mutable_layers = critic.layers();
  for (std::size_t k = 0; k < n; ++k) {
    auto& layer = mutable_layers[k];
    switch (layer.kind) {
      case nn::LayerKind::dense:
      case nn::LayerKind::pointwise_conv:
        layer.weight.grad.noalias() += deltas[k + 1].transpose() * zeta;
        zeta = zeta * layer.weight.value.transpose();
        break;
      case nn::LayerKind::relu:
        zeta = (critic.activation(k + 1).array() > T(0)).select(zeta, T(0));
        break;
      default: break;
    }
  }
  return value;
}

template float gradient_penalty<float>(nn::Sequential<float>&, const nn::Matrix<float>&, const nn::Matrix<float>&,
                                       const Eigen::VectorXf&, float, bool);
template double gradient_penalty<double>(nn::Sequential<double>&, const nn::Matrix<double>&,
                                         const nn::Matrix<double>&, const Eigen::VectorXd&, double, bool);

// ---------------------------------------------------------------------------

nn::Matrix<float> latent_grid(std::size_t count, std::size_t latent_dim) {
  nn::Matrix<float> z = nn::Matrix<float>::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(latent_dim));
  for (std::size_t i = 0; i < count; ++i) {
    const double t = count > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
    z(static_cast<Eigen::Index>(i), 0) = static_cast<float>(t);
  }
  return z;
}

double critic_gap(const LatentGan& gan, const nn::Matrix<float>& real, const nn::Matrix<float>& z) {
  const double real_mean = gan.discriminate_batch(real).cast<double>().mean();
  const double fake_mean = gan.discriminate_batch(gan.generate_batch(z)).cast<double>().mean();
  return std::abs(real_mean - fake_mean);
}

namespace {

nn::Matrix<float> sample_latent(Rng& rng, std::size_t batch, std::size_t dim) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  nn::Matrix<float> z(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
  return z;
}

struct CriticStats {
  double d_real = 0.0;
  double d_fake = 0.0;
  double gp = 0.0;
};

// One WGAN-GP critic step on a fresh mini-batch.
CriticStats critic_step(nn::Sequential<float>& critic, nn::Adam<float>& opt, const nn::Sequential<float>& gen,
                        const nn::Matrix<float>& real_gfvs, const GANConfig& cfg, Rng& rng) {
  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  std::uniform_int_distribution<Eigen::Index> pick(0, real_gfvs.rows() - 1);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  nn::Matrix<float> real(batch, real_gfvs.cols());
  for (Eigen::Index b = 0; b < batch; ++b) real.row(b) = real_gfvs.row(pick(rng));
  const nn::Matrix<float> fake = gen.predict(sample_latent(rng, cfg.batch_size, cfg.latent_dim));
  Eigen::VectorXf eps(batch);
  for (Eigen::Index b = 0; b < batch; ++b) eps(b) = unit(rng);
  const nn::Matrix<float> minus_mean = nn::Matrix<float>::Constant(batch, 1, -1.0f / static_cast<float>(batch));

  CriticStats stats;
  critic.zero_grad();
  stats.d_real = critic.forward(real).cast<double>().mean();
  critic.backward(minus_mean);
  stats.d_fake = critic.forward(fake).cast<double>().mean();
  critic.backward(nn::Matrix<float>(-minus_mean));
  stats.gp = gradient_penalty(critic, real, fake, eps, static_cast<float>(cfg.lambda_gp), true);
  opt.step();
  return stats;
}

}  // namespace

double estimate_gap(const LatentGan& gan, const nn::Matrix<float>& real_gfvs, std::size_t steps) {
  if (real_gfvs.rows() == 0) throw std::invalid_argument("estimate_gap: empty GFV dataset");
  GANConfig cfg = gan.config();
  cfg.seed = derive_seed(gan.config().seed, "gap-probe");
  LatentGan probe(cfg);
  nn::copy_values(gan.generator(), probe.generator());
  auto& critic = probe.critic();
  nn::Adam<float> opt(critic.params(), cfg.adam);
  Rng rng(derive_seed(cfg.seed, "gap-probe-train"));
  for (std::size_t s = 0; s < steps; ++s) critic_step(critic, opt, probe.generator(), real_gfvs, cfg, rng);
  return critic_gap(probe, real_gfvs, latent_grid(256, cfg.latent_dim));
}

GanTrainResult train_gan(LatentGan& gan, const nn::Matrix<float>& real_gfvs, const GanLogCallback& on_log) {
  if (real_gfvs.rows() == 0) throw std::invalid_argument("train_gan: empty GFV dataset");
  if (static_cast<std::size_t>(real_gfvs.cols()) != kGfvDim) {
    throw nn::ShapeError("train_gan: GFV dataset has " + std::to_string(real_gfvs.cols()) + " columns");
  }
  const GANConfig& cfg = gan.config();
  auto& gen = gan.generator();
  auto& critic = gan.critic();
  nn::Adam<float> gen_opt(gen.params(), cfg.adam);
  nn::Adam<float> critic_opt(critic.params(), cfg.adam);
  Rng rng(derive_seed(cfg.seed, "gan-train"));

  const nn::Matrix<float> eval_z = latent_grid(256, cfg.latent_dim);
  GanTrainResult result;
  if (cfg.gap_probe_steps > 0) result.initial_gap = estimate_gap(gan, real_gfvs, cfg.gap_probe_steps);
  {
    const nn::Matrix<float> fake = gan.generate_batch(eval_z);
    GanLogRow row{0, gan.discriminate_batch(real_gfvs).cast<double>().mean(),
                  gan.discriminate_batch(fake).cast<double>().mean(), 0.0};
    result.history.push_back(row);
    if (on_log) on_log(row);
  }

  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  const nn::Matrix<float> minus_mean = nn::Matrix<float>::Constant(batch, 1, -1.0f / static_cast<float>(batch));
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    CriticStats stats;
    for (std::size_t c = 0; c < cfg.n_critic; ++c) {
      stats = critic_step(critic, critic_opt, gen, real_gfvs, cfg, rng);
      ++result.critic_steps;
    }

    gen.zero_grad();
    const nn::Matrix<float> fake = gen.forward(sample_latent(rng, cfg.batch_size, cfg.latent_dim));
    critic.forward(fake);
    const nn::Matrix<float> grad_fake = critic.input_gradient(minus_mean);
    gen.backward(grad_fake);
    gen_opt.step();
    ++result.generator_steps;

    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations)) {
      GanLogRow row{it, stats.d_real, stats.d_fake, stats.gp};
      result.history.push_back(row);
      if (on_log) on_log(row);
    }
  }
  if (cfg.gap_probe_steps > 0) result.final_gap = estimate_gap(gan, real_gfvs, cfg.gap_probe_steps);
  return result;
}

}  // namespace rlgan
