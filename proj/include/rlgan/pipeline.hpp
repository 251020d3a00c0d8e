#pragma once

#include "rlgan/agent.hpp"
#include "rlgan/autoencoder.hpp"
#include "rlgan/checkpoint.hpp"
#include "rlgan/geometry.hpp"
#include "rlgan/latent_gan.hpp"
#include "rlgan/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlgan {

class MissingModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Completion

enum class CompletionMode { vanilla, hybrid, ae };
enum class CompletionPath { ae, gan };

std::string_view mode_name(CompletionMode mode);
CompletionMode parse_mode(std::string_view name);
std::string_view path_name(CompletionPath path);

struct CompletionResult {
  PointCloud output;
  CompletionPath path = CompletionPath::ae;
  Gfv gfv;  // the decoded feature vector
  /// NaN when the mode does not score that path.
  double d_score_ae;
  double d_score_gan;
  /// Actor + generator forward only; zero for the AE mode.
  double latency_ms = 0.0;
};

/// Holds non-owning views of the trained models. GAN and actor are only
/// required by the vanilla and hybrid modes.
class Pipeline {
 public:
  Pipeline(const AutoEncoder& ae, const LatentGan* gan, const nn::Sequential<float>* actor);

  CompletionResult complete(const PointCloud& partial, CompletionMode mode) const;
  CompletionResult complete_vanilla(const PointCloud& partial) const;
  /// Decodes whichever of E(P_in) and G(actor(E(P_in))) the critic scores
  /// higher; ties take the GAN path.
  CompletionResult complete_hybrid(const PointCloud& partial) const;
  CompletionResult complete_ae(const PointCloud& partial) const;

  /// G(actor(s)) with its wall-clock cost in milliseconds.
  Gfv action_to_gfv(const Gfv& state, double* latency_ms = nullptr) const;

  const AutoEncoder& autoencoder() const { return ae_; }

 private:
  void require_gan() const;

  const AutoEncoder& ae_;
  const LatentGan* gan_;
  const nn::Sequential<float>* actor_;
};

// ---------------------------------------------------------------------------
// Classifier

struct ClassifierConfig {
  std::vector<std::size_t> point_channels{64, 128, 256};
  std::size_t hidden = 128;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-point dense stack, max pool over points, then a small dense head.
class Classifier {
 public:
  explicit Classifier(const ClassifierConfig& config);

  const ClassifierConfig& config() const { return config_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Throws std::logic_error when untrained.
  ShapeCategory classify(const PointCloud& cloud) const;
  /// Unnormalized class scores, one row per cloud.
  nn::Matrix<float> logits(std::span<const PointCloud> clouds) const;

  nn::Sequential<float>& network() { return net_; }
  const nn::Sequential<float>& network() const { return net_; }

  void save(Checkpoint& ckpt) const;
  /// Restores weights and marks the model trained.
  void load(const Checkpoint& ckpt);

 private:
  ClassifierConfig config_;
  nn::Sequential<float> net_{"classifier"};
  bool trained_ = false;
};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits (divided by
/// the batch size).
double softmax_cross_entropy(const nn::Matrix<float>& logits, std::span<const std::size_t> labels,
                             nn::Matrix<float>& grad);

using ClassifierEpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

std::vector<double> train_classifier(Classifier& model, std::span<const PointCloud> clouds,
                                     std::span<const ShapeCategory> labels,
                                     const ClassifierEpochCallback& on_epoch = {});
double evaluate_accuracy(const Classifier& model, std::span<const PointCloud> clouds,
                         std::span<const ShapeCategory> labels);

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::vector<PointCloud> train;
  std::vector<ShapeCategory> train_labels;
  std::vector<std::uint64_t> train_seeds;
  std::vector<PointCloud> test;
  std::vector<ShapeCategory> test_labels;
  std::vector<std::uint64_t> test_seeds;
};

/// Categories cycle through table, chair, airplane, car.
Dataset generate_dataset(std::uint64_t seed, std::size_t train_count, std::size_t test_count, std::size_t points);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Partial clouds of every training shape at every ratio, for agent training.
std::vector<PointCloud> make_partials(std::span<const PointCloud> clouds, std::span<const double> ratios,
                                      std::uint64_t seed, std::string_view stream);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::vector<double> ratios{0.2, 0.3, 0.4, 0.5, 0.7};
  std::vector<CompletionMode> modes{CompletionMode::ae, CompletionMode::vanilla, CompletionMode::hybrid};
  double jitter_sigma = 0.0;
  std::uint64_t seed = 0;
  const Classifier* classifier = nullptr;
};

struct EvalReportRow {
  double ratio;      // 0 for the ground-truth row
  std::string mode;  // ae, vanilla, hybrid, raw, gt
  double mean_chamfer_normalized;
  std::optional<double> accuracy;
  std::optional<double> latency_ms_mean;
  std::size_t shapes;
  std::size_t gan_path_count = 0;  // hybrid only
};

struct EvalReport {
  std::vector<EvalReportRow> rows;

  const EvalReportRow* find(double ratio, std::string_view mode) const;
  std::string to_csv() const;
  std::string to_json() const;
};

/// For every ratio, each test shape loses points around one centre that is
/// fixed per shape, so larger ratios remove supersets of smaller ones.
EvalReport evaluate_completion(const Pipeline& pipeline, std::span<const PointCloud> test,
                               std::span<const ShapeCategory> labels, const EvalOptions& options);

/// Adds N(0, sigma) noise clipped at 5 sigma to every coordinate.
PointCloud jitter_cloud(const PointCloud& cloud, double sigma, std::uint64_t seed);

/// Smallest normalized Chamfer distance from `cloud` to any reference cloud.
double nearest_chamfer(const PointCloud& cloud, std::span<const PointCloud> references);

struct GanSampleCheck {
  /// max over training shapes of the distance from their AE reconstruction to
  /// the nearest training shape.
  double threshold = 0.0;
  std::vector<double> sample_distances;  // nearest training shape per sample
  std::size_t within = 0;
};

/// Decodes `samples` generator outputs for z ~ U[-1, 1] and compares their
/// nearest-training-shape distance against the AE's own worst case.
GanSampleCheck check_gan_samples(const AutoEncoder& ae, const LatentGan& gan, std::span<const PointCloud> train,
                                 std::size_t samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  RunConfig() { apply_seed(seed); }

  std::uint64_t seed = 1;
  std::size_t train_shapes = 400;
  std::size_t test_shapes = 100;
  std::size_t points = 512;
  std::vector<double> ratios{0.2, 0.3, 0.4, 0.5, 0.7};

  AEConfig ae;
  GANConfig gan;
  DDPGConfig agent;
  ClassifierConfig classifier;
  RewardWeights reward;
  std::size_t agent_eval_episodes = 100;
  double jitter = 0.0;

  /// Sets one field from its textual form. Throws std::invalid_argument on
  /// unknown keys or malformed values.
  void set(std::string_view key, std::string_view value);
  /// Propagates `seed` into every sub-config.
  void apply_seed(std::uint64_t s);

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
  static std::vector<std::string> keys();
};

std::vector<double> parse_ratio_list(std::string_view text);

// ---------------------------------------------------------------------------
// Desk-run helpers shared by the CLI and the acceptance harness

/// Agent evaluation episodes: the first `agent_eval_episodes` test shapes,
/// ratios cycling.
std::vector<PointCloud> agent_eval_partials(const Dataset& data, const RunConfig& cfg);

/// `count` partial test shapes (cycling shapes and ratios) for timing.
std::vector<PointCloud> bench_partials(const Dataset& data, const RunConfig& cfg, std::size_t count);

struct LatencyStats {
  double mean_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
};

/// Times actor + generator for every partial (encoding excluded).
LatencyStats measure_latency(const Pipeline& pipeline, std::span<const PointCloud> partials);

}  // namespace rlgan
