#pragma once

#include "rlgan/checkpoint.hpp"
#include "rlgan/geometry.hpp"
#include "rlgan/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace rlgan {

/// Dimension of the global feature vector (the autoencoder bottleneck).
inline constexpr std::size_t kGfvDim = 128;

using Gfv = Eigen::VectorXf;

struct AEConfig {
  std::vector<std::size_t> encoder_channels{64, 128, 128, 256, 128};
  std::vector<std::size_t> decoder_widths{256, 256};
  std::size_t output_points = 512;
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stacks clouds row-wise into an (sum N) x 3 matrix; `offsets` receives the
/// group boundaries for max pooling.
nn::Matrix<float> stack_points(std::span<const PointCloud> clouds, std::vector<std::size_t>& offsets);
PointCloud cloud_from_row(const float* xyz, std::size_t n_points);

/// Point-wise shared encoder with symmetric max pooling, and a fully
/// connected decoder producing a fixed number of points.
class AutoEncoder {
 public:
  explicit AutoEncoder(const AEConfig& config);

  const AEConfig& config() const { return config_; }
  std::size_t output_points() const { return config_.output_points; }

  Gfv encode(const PointCloud& cloud) const;
  /// One GFV per row.
  nn::Matrix<float> encode_batch(std::span<const PointCloud> clouds) const;
  PointCloud decode(const Gfv& gfv) const;
  /// Rows of (M*3) coordinates, one per input GFV row.
  nn::Matrix<float> decode_batch(const nn::Matrix<float>& gfvs) const;

  nn::Sequential<float>& encoder() { return encoder_; }
  nn::Sequential<float>& decoder() { return decoder_; }
  const nn::Sequential<float>& encoder() const { return encoder_; }
  const nn::Sequential<float>& decoder() const { return decoder_; }

  void freeze();
  bool frozen() const { return encoder_.frozen() && decoder_.frozen(); }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  AEConfig config_;
  nn::Sequential<float> encoder_{"encoder"};
  nn::Sequential<float> decoder_{"decoder"};
};

struct AETrainResult {
  std::vector<double> epoch_mean_chamfer;  // raw Chamfer sum, averaged over shapes
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mini-batch Adam on the Chamfer sum between each input cloud and its
/// reconstruction.
AETrainResult train_ae(AutoEncoder& ae, std::span<const PointCloud> dataset, const EpochCallback& on_epoch = {});

/// Chamfer loss of one batch and its gradient w.r.t. the decoder output rows.
double chamfer_batch_loss(std::span<const PointCloud> targets, const nn::Matrix<float>& decoded,
                          nn::Matrix<float>& grad);

}  // namespace rlgan
