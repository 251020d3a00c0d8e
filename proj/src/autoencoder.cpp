#include "rlgan/autoencoder.hpp"

#include "rlgan/random.hpp"

#include <algorithm>
#include <numeric>

namespace rlgan {

void AEConfig::validate() const {
  if (encoder_channels.empty() || encoder_channels.back() != kGfvDim) {
    throw std::invalid_argument("the last encoder channel must equal the GFV dimension (128)");
  }
  if (output_points == 0) throw std::invalid_argument("autoencoder output point count must be positive");
  if (batch_size == 0) throw std::invalid_argument("autoencoder batch size must be positive");
}

nn::Matrix<float> stack_points(std::span<const PointCloud> clouds, std::vector<std::size_t>& offsets) {
  offsets.assign(1, 0);
  for (const auto& c : clouds) {
    if (c.empty()) throw GeometryError("cannot encode an empty cloud");
    offsets.push_back(offsets.back() + c.size());
  }
  nn::Matrix<float> x(static_cast<Eigen::Index>(offsets.back()), 3);
  Eigen::Index row = 0;
  for (const auto& c : clouds) {
    for (const auto& p : c.points()) x.row(row++) = p.cast<float>().transpose();
  }
  return x;
}

PointCloud cloud_from_row(const float* xyz, std::size_t n_points) {
  std::vector<Point3> points(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    points[i] = Point3(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
  }
  return PointCloud(std::move(points));
}

AutoEncoder::AutoEncoder(const AEConfig& config) : config_(config) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t c : config_.encoder_channels) {
    encoder_.pointwise_conv(in, c).relu();
    in = c;
  }
  encoder_.max_pool_over_points();

  in = kGfvDim;
  for (std::size_t w : config_.decoder_widths) {
    decoder_.dense(in, w).relu();
    in = w;
  }
  decoder_.dense(in, 3 * config_.output_points);

  Rng rng(derive_seed(config_.seed, "ae-init"));
  encoder_.init(rng);
  decoder_.init(rng);
}

Gfv AutoEncoder::encode(const PointCloud& cloud) const {
  const nn::Matrix<float> out = encode_batch(std::span<const PointCloud>(&cloud, 1));
  return out.row(0).transpose();
}

nn::Matrix<float> AutoEncoder::encode_batch(std::span<const PointCloud> clouds) const {
  if (clouds.empty()) throw GeometryError("encode_batch needs at least one cloud");
  std::vector<std::size_t> offsets;
  const auto x = stack_points(clouds, offsets);
  return encoder_.predict(x, offsets);
}

PointCloud AutoEncoder::decode(const Gfv& gfv) const {
  if (static_cast<std::size_t>(gfv.size()) != kGfvDim) {
    throw nn::ShapeError("decode expects a 128-dim GFV, got " + std::to_string(gfv.size()));
  }
  const nn::Matrix<float> out = decode_batch(gfv.transpose());
  return cloud_from_row(out.data(), config_.output_points);
}

nn::Matrix<float> AutoEncoder::decode_batch(const nn::Matrix<float>& gfvs) const {
  if (!gfvs.allFinite()) throw std::domain_error("decode: GFV contains a non-finite value");
  return decoder_.predict(gfvs);
}

void AutoEncoder::freeze() {
  encoder_.freeze();
  decoder_.freeze();
}

void AutoEncoder::save(Checkpoint& ckpt) const {
  ckpt.add(encoder_);
  ckpt.add(decoder_);
}

void AutoEncoder::load(const Checkpoint& ckpt) {
  ckpt.restore(encoder_);
  ckpt.restore(decoder_);
}

double chamfer_batch_loss(std::span<const PointCloud> targets, const nn::Matrix<float>& decoded,
                          nn::Matrix<float>& grad) {
  const auto batch = static_cast<Eigen::Index>(targets.size());
  if (decoded.rows() != batch || decoded.cols() % 3 != 0) {
    throw nn::ShapeError("chamfer loss: decoded " + nn::shape_string(decoded.rows(), decoded.cols()) +
                         " does not match a batch of " + std::to_string(batch));
  }
  const auto m = static_cast<std::size_t>(decoded.cols() / 3);
  grad.resize(decoded.rows(), decoded.cols());
  std::vector<Point3> predicted(m);
  std::vector<Point3> g(m);
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const float* row = decoded.row(b).data();
    for (std::size_t i = 0; i < m; ++i) predicted[i] = Point3(row[3 * i], row[3 * i + 1], row[3 * i + 2]);
    total += chamfer_with_gradient(targets[static_cast<std::size_t>(b)].points(), predicted, g);
    float* grow = grad.row(b).data();
    for (std::size_t i = 0; i < m; ++i) {
      for (int k = 0; k < 3; ++k) grow[3 * i + k] = static_cast<float>(g[i][k] / static_cast<double>(batch));
    }
  }
  return total / static_cast<double>(batch);
}

AETrainResult train_ae(AutoEncoder& ae, std::span<const PointCloud> dataset, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train_ae: empty dataset");
  const AEConfig& config = ae.config();
  auto& enc = ae.encoder();
  auto& dec = ae.decoder();

  std::vector<nn::Param<float>*> params = enc.params();
  for (auto* p : dec.params()) params.push_back(p);
  nn::Adam<float> adam(params, nn::AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});

  Rng rng(derive_seed(config.seed, "ae-shuffle"));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  AETrainResult result;
  std::vector<PointCloud> batch;
  std::vector<std::size_t> offsets;
  nn::Matrix<float> grad;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      const auto x = stack_points(batch, offsets);
      enc.zero_grad();
      dec.zero_grad();
      const auto gfv = enc.forward(x, offsets);
      const auto decoded = dec.forward(gfv);
      const double loss = chamfer_batch_loss(batch, decoded, grad);
      const auto grad_gfv = dec.backward(grad);
      enc.backward(grad_gfv);
      adam.step();
      epoch_total += loss * static_cast<double>(batch.size());
    }
    const double mean = epoch_total / static_cast<double>(dataset.size());
    result.epoch_mean_chamfer.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  return result;
}

}  // namespace rlgan
