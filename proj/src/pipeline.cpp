#include "rlgan/pipeline.hpp"

#include "json.hpp"
#include "rlgan/random.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace rlgan {

std::string_view mode_name(CompletionMode mode) {
  switch (mode) {
    case CompletionMode::vanilla: return "vanilla";
    case CompletionMode::hybrid: return "hybrid";
    case CompletionMode::ae: return "ae";
  }
  return "?";
}

CompletionMode parse_mode(std::string_view name) {
  if (name == "vanilla") return CompletionMode::vanilla;
  if (name == "hybrid") return CompletionMode::hybrid;
  if (name == "ae") return CompletionMode::ae;
  throw std::invalid_argument("unknown completion mode '" + std::string(name) + "'");
}

std::string_view path_name(CompletionPath path) { return path == CompletionPath::gan ? "gan" : "ae"; }

// ---------------------------------------------------------------------------

Pipeline::Pipeline(const AutoEncoder& ae, const LatentGan* gan, const nn::Sequential<float>* actor)
    : ae_(ae), gan_(gan), actor_(actor) {}

void Pipeline::require_gan() const {
  if (gan_ == nullptr) throw MissingModelError("completion mode needs a trained GAN");
  if (actor_ == nullptr) throw MissingModelError("completion mode needs a trained actor");
}

Gfv Pipeline::action_to_gfv(const Gfv& state, double* latency_ms) const {
  require_gan();
  const auto t0 = std::chrono::steady_clock::now();
  const nn::Matrix<float> z = actor_->predict(state.transpose());
  const nn::Matrix<float> gfv = gan_->generator().predict(z);
  const auto t1 = std::chrono::steady_clock::now();
  if (latency_ms != nullptr) *latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return gfv.row(0).transpose();
}

CompletionResult Pipeline::complete(const PointCloud& partial, CompletionMode mode) const {
  switch (mode) {
    case CompletionMode::vanilla: return complete_vanilla(partial);
    case CompletionMode::hybrid: return complete_hybrid(partial);
    case CompletionMode::ae: return complete_ae(partial);
  }
  throw std::invalid_argument("bad completion mode");
}

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

CompletionResult Pipeline::complete_vanilla(const PointCloud& partial) const {
  require_gan();
  CompletionResult r{{}, CompletionPath::gan, {}, kNaN, kNaN, 0.0};
  r.gfv = action_to_gfv(ae_.encode(partial), &r.latency_ms);
  r.output = ae_.decode(r.gfv);
  return r;
}

CompletionResult Pipeline::complete_hybrid(const PointCloud& partial) const {
  require_gan();
  CompletionResult r{{}, CompletionPath::gan, {}, kNaN, kNaN, 0.0};
  const Gfv gfv_ae = ae_.encode(partial);
  const Gfv gfv_gan = action_to_gfv(gfv_ae, &r.latency_ms);
  r.d_score_ae = gan_->discriminate(gfv_ae);
  r.d_score_gan = gan_->discriminate(gfv_gan);
  r.path = r.d_score_gan >= r.d_score_ae ? CompletionPath::gan : CompletionPath::ae;
  r.gfv = r.path == CompletionPath::gan ? gfv_gan : gfv_ae;
  r.output = ae_.decode(r.gfv);
  return r;
}

CompletionResult Pipeline::complete_ae(const PointCloud& partial) const {
  CompletionResult r{{}, CompletionPath::ae, ae_.encode(partial), kNaN, kNaN, 0.0};
  r.output = ae_.decode(r.gfv);
  return r;
}

// ---------------------------------------------------------------------------

void ClassifierConfig::validate() const {
  if (point_channels.empty()) throw std::invalid_argument("classifier needs at least one point layer");
  if (hidden == 0 || batch_size == 0) throw std::invalid_argument("classifier sizes must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("classifier learning rate must be positive");
}

Classifier::Classifier(const ClassifierConfig& config) : config_(config) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t c : config_.point_channels) {
    net_.pointwise_conv(in, c).relu();
    in = c;
  }
  net_.max_pool_over_points();
  net_.dense(in, config_.hidden).relu();
  net_.dense(config_.hidden, kNumCategories);
  Rng rng(derive_seed(config_.seed, "classifier-init"));
  net_.init(rng);
}

nn::Matrix<float> Classifier::logits(std::span<const PointCloud> clouds) const {
  if (!trained_) throw std::logic_error("classifier has not been trained");
  nn::Matrix<float> out(static_cast<Eigen::Index>(clouds.size()), static_cast<Eigen::Index>(kNumCategories));
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> offsets;
  for (std::size_t start = 0; start < clouds.size(); start += kChunk) {
    const auto part = clouds.subspan(start, std::min(kChunk, clouds.size() - start));
    const nn::Matrix<float> x = stack_points(part, offsets);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) =
        net_.predict(x, offsets);
  }
  return out;
}

ShapeCategory Classifier::classify(const PointCloud& cloud) const {
  const nn::Matrix<float> l = logits(std::span<const PointCloud>(&cloud, 1));
  Eigen::Index best = 0;
  l.row(0).maxCoeff(&best);
  return kAllCategories[static_cast<std::size_t>(best)];
}

void Classifier::save(Checkpoint& ckpt) const {
  if (!trained_) throw std::logic_error("refusing to save an untrained classifier");
  ckpt.add(net_);
}

void Classifier::load(const Checkpoint& ckpt) {
  ckpt.restore(net_);
  trained_ = true;
}

double softmax_cross_entropy(const nn::Matrix<float>& logits, std::span<const std::size_t> labels,
                             nn::Matrix<float>& grad) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw nn::ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  const Eigen::Index B = logits.rows();
  grad.resize(B, logits.cols());
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto label = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
    if (label >= logits.cols()) throw std::out_of_range("cross-entropy: label out of range");
    const double m = logits.row(b).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(static_cast<double>(logits(b, c)) - m);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double p = std::exp(static_cast<double>(logits(b, c)) - m) / z;
      grad(b, c) = static_cast<float>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(B));
    }
    loss += -(static_cast<double>(logits(b, label)) - m - std::log(z));
  }
  return loss / static_cast<double>(B);
}

std::vector<double> train_classifier(Classifier& model, std::span<const PointCloud> clouds,
                                     std::span<const ShapeCategory> labels, const ClassifierEpochCallback& on_epoch) {
  if (clouds.empty()) throw std::invalid_argument("train_classifier: empty dataset");
  if (clouds.size() != labels.size()) throw std::invalid_argument("train_classifier: label count mismatch");
  const ClassifierConfig& cfg = model.config();
  auto& net = model.network();
  nn::Adam<float> opt(net.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng rng(derive_seed(cfg.seed, "classifier-shuffle"));

  std::vector<std::size_t> order(clouds.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  std::vector<PointCloud> batch;
  std::vector<std::size_t> batch_labels, offsets;
  nn::Matrix<float> grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(clouds[order[i]]);
        batch_labels.push_back(static_cast<std::size_t>(labels[order[i]]));
      }
      net.zero_grad();
      const nn::Matrix<float> points = stack_points(batch, offsets);
      const nn::Matrix<float> l = net.forward(points, offsets);
      sum += softmax_cross_entropy(l, batch_labels, grad) * static_cast<double>(batch.size());
      net.backward(grad);
      opt.step();
    }
    history.push_back(sum / static_cast<double>(clouds.size()));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  model.mark_trained();
  return history;
}

double evaluate_accuracy(const Classifier& model, std::span<const PointCloud> clouds,
                         std::span<const ShapeCategory> labels) {
  if (clouds.empty()) throw std::invalid_argument("evaluate_accuracy: empty set");
  if (clouds.size() != labels.size()) throw std::invalid_argument("evaluate_accuracy: label count mismatch");
  const nn::Matrix<float> l = model.logits(clouds);
  std::size_t correct = 0;
  for (Eigen::Index b = 0; b < l.rows(); ++b) {
    Eigen::Index best = 0;
    l.row(b).maxCoeff(&best);
    if (kAllCategories[static_cast<std::size_t>(best)] == labels[static_cast<std::size_t>(b)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

// ---------------------------------------------------------------------------

Dataset generate_dataset(std::uint64_t seed, std::size_t train_count, std::size_t test_count, std::size_t points) {
  Dataset d;
  auto fill = [&](std::size_t count, std::string_view stream, std::vector<PointCloud>& clouds,
                  std::vector<ShapeCategory>& labels, std::vector<std::uint64_t>& seeds) {
    for (std::size_t i = 0; i < count; ++i) {
      const ShapeCategory cat = kAllCategories[i % kNumCategories];
      const std::uint64_t s = derive_seed(seed, stream, i);
      clouds.push_back(sample_shape(cat, points, s));
      labels.push_back(cat);
      seeds.push_back(s);
    }
  };
  fill(train_count, "train-shape", d.train, d.train_labels, d.train_seeds);
  fill(test_count, "test-shape", d.test, d.test_labels, d.test_seeds);
  return d;
}

namespace {

std::string shape_file(std::size_t index, ShapeCategory cat) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04zu_%s.xyz", index, std::string(category_name(cat)).c_str());
  return buf;
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ostringstream manifest;
  manifest << "split,index,category,seed,file\n";
  auto emit = [&](std::string_view split, const std::vector<PointCloud>& clouds,
                  const std::vector<ShapeCategory>& labels, const std::vector<std::uint64_t>& seeds) {
    const fs::path sub = dir / split;
    fs::create_directories(sub);
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const std::string name = shape_file(i, labels[i]);
      write_xyz(sub / name, clouds[i]);
      manifest << split << ',' << i << ',' << category_name(labels[i]) << ',' << seeds[i] << ',' << split << '/'
               << name << '\n';
    }
  };
  emit("train", data.train, data.train_labels, data.train_seeds);
  emit("test", data.test, data.test_labels, data.test_seeds);
  std::ofstream out(dir / "manifest.csv", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  out << manifest.str();
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw std::runtime_error("dataset manifest not found: " + (dir / "manifest.csv").string());
  Dataset d;
  std::string line;
  std::getline(in, line);
  if (line != "split,index,category,seed,file") throw std::runtime_error("unexpected manifest header: " + line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    const ShapeCategory cat = parse_category(f[2]);
    const std::uint64_t seed = std::stoull(f[3]);
    PointCloud cloud = read_xyz(dir / f[4]);
    if (f[0] == "train") {
      d.train.push_back(std::move(cloud));
      d.train_labels.push_back(cat);
      d.train_seeds.push_back(seed);
    } else if (f[0] == "test") {
      d.test.push_back(std::move(cloud));
      d.test_labels.push_back(cat);
      d.test_seeds.push_back(seed);
    } else {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": unknown split '" + f[0] + "'");
    }
  }
  return d;
}

std::vector<PointCloud> make_partials(std::span<const PointCloud> clouds, std::span<const double> ratios,
                                      std::uint64_t seed, std::string_view stream) {
  std::vector<PointCloud> out;
  out.reserve(clouds.size() * ratios.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    for (std::size_t j = 0; j < ratios.size(); ++j) {
      out.push_back(corrupt_cloud(clouds[i], {ratios[j], derive_seed(seed, stream, i * ratios.size() + j)}));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PointCloud jitter_cloud(const PointCloud& cloud, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("jitter sigma must be non-negative");
  if (sigma == 0.0) return cloud;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  const double bound = 5.0 * sigma;
  std::vector<Point3> pts = cloud.points();
  for (Point3& p : pts) {
    for (int k = 0; k < 3; ++k) p[k] += std::clamp(noise(rng), -bound, bound);
  }
  return PointCloud(std::move(pts));
}

double nearest_chamfer(const PointCloud& cloud, std::span<const PointCloud> references) {
  if (references.empty()) throw std::invalid_argument("nearest_chamfer: no reference clouds");
  double best = std::numeric_limits<double>::infinity();
  for (const PointCloud& ref : references) {
    const ChamferMatches m = chamfer_matches_scan(cloud.points(), ref.points());
    best = std::min(best, m.total() / static_cast<double>(cloud.size() + ref.size()));
  }
  return best;
}

GanSampleCheck check_gan_samples(const AutoEncoder& ae, const LatentGan& gan, std::span<const PointCloud> train,
                                 std::size_t samples, std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("check_gan_samples: no training shapes");
  GanSampleCheck out;
  const nn::Matrix<float> recon = ae.decode_batch(ae.encode_batch(train));
  for (Eigen::Index i = 0; i < recon.rows(); ++i) {
    const PointCloud c = cloud_from_row(recon.row(i).data(), ae.output_points());
    out.threshold = std::max(out.threshold, nearest_chamfer(c, train));
  }
  Rng rng(derive_seed(seed, "gan-samples"));
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  nn::Matrix<float> z(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(gan.config().latent_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
  const nn::Matrix<float> decoded = ae.decode_batch(gan.generate_batch(z));
  for (Eigen::Index i = 0; i < decoded.rows(); ++i) {
    const double d = nearest_chamfer(cloud_from_row(decoded.row(i).data(), ae.output_points()), train);
    out.sample_distances.push_back(d);
    if (d <= out.threshold) ++out.within;
  }
  return out;
}

const EvalReportRow* EvalReport::find(double ratio, std::string_view mode) const {
  for (const auto& r : rows) {
    if (r.mode == mode && std::abs(r.ratio - ratio) < 1e-12) return &r;
  }
  return nullptr;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "ratio,mode,mean_chamfer_normalized,accuracy,latency_ms_mean,shapes,gan_path_count\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g", r.ratio);
    out << buf << ',' << r.mode << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.mean_chamfer_normalized);
    out << buf << ',';
    if (r.accuracy) {
      std::snprintf(buf, sizeof buf, "%.6g", *r.accuracy);
      out << buf;
    }
    out << ',';
    if (r.latency_ms_mean) {
      std::snprintf(buf, sizeof buf, "%.6g", *r.latency_ms_mean);
      out << buf;
    }
    out << ',' << r.shapes << ',' << r.gan_path_count << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["ratio"] = r.ratio;
    j["mode"] = r.mode;
    j["mean_chamfer_normalized"] = r.mean_chamfer_normalized;
    j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    j["latency_ms_mean"] = r.latency_ms_mean ? nlohmann::json(*r.latency_ms_mean) : nlohmann::json(nullptr);
    j["shapes"] = r.shapes;
    j["gan_path_count"] = r.gan_path_count;
    rows_json.push_back(std::move(j));
  }
  return nlohmann::json{{"rows", rows_json}}.dump(2) + "\n";
}

EvalReport evaluate_completion(const Pipeline& pipeline, std::span<const PointCloud> test,
                               std::span<const ShapeCategory> labels, const EvalOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate_completion: empty test set");
  if (labels.size() != test.size()) throw std::invalid_argument("evaluate_completion: label count mismatch");
  const std::size_t n = test.size();
  const Classifier* cls = options.classifier;

  std::vector<std::size_t> centers(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(options.seed, "eval-center", i));
    centers[i] = std::uniform_int_distribution<std::size_t>(0, test[i].size() - 1)(rng);
  }

  auto mean_chamfer = [&](const std::vector<PointCloud>& clouds) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += chamfer_normalized(test[i], clouds[i]);
    return sum / static_cast<double>(n);
  };
  auto accuracy = [&](const std::vector<PointCloud>& clouds) -> std::optional<double> {
    if (cls == nullptr) return std::nullopt;
    return evaluate_accuracy(*cls, clouds, labels);
  };

  EvalReport report;
  for (std::size_t ri = 0; ri < options.ratios.size(); ++ri) {
    const double ratio = options.ratios[ri];
    std::vector<PointCloud> partials;
    partials.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      PointCloud p = corrupt_cloud_around(test[i], centers[i], ratio);
      if (options.jitter_sigma > 0.0) {
        p = jitter_cloud(p, options.jitter_sigma, derive_seed(options.seed, "eval-jitter", i * 1000 + ri));
      }
      partials.push_back(std::move(p));
    }
    report.rows.push_back({ratio, "raw", mean_chamfer(partials), accuracy(partials), std::nullopt, n, 0});

    for (CompletionMode mode : options.modes) {
      std::vector<PointCloud> outputs;
      outputs.reserve(n);
      double latency = 0.0;
      std::size_t gan_paths = 0;
      for (const PointCloud& p : partials) {
        CompletionResult r = pipeline.complete(p, mode);
        latency += r.latency_ms;
        if (mode != CompletionMode::ae && r.path == CompletionPath::gan) ++gan_paths;
        outputs.push_back(std::move(r.output));
      }
      std::optional<double> lat;
      if (mode != CompletionMode::ae) lat = latency / static_cast<double>(n);
      report.rows.push_back(
          {ratio, std::string(mode_name(mode)), mean_chamfer(outputs), accuracy(outputs), lat, n, gan_paths});
    }
  }
  std::vector<PointCloud> gt(test.begin(), test.end());
  report.rows.push_back({0.0, "gt", mean_chamfer(gt), accuracy(gt), std::nullopt, n, 0});
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RLGAN_SIZE_FIELD(name, member)                                                         \
  Field {                                                                                      \
    name, [](RunConfig& c, std::string_view v) { c.member = static_cast<std::size_t>(to_u64(name, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                            \
  }
#define RLGAN_DOUBLE_FIELD(name, member)                                                        \
  Field {                                                                                       \
    name, [](RunConfig& c, std::string_view v) { c.member = to_double(name, v); },              \
        [](const RunConfig& c) { return fmt(c.member); }                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"seed", [](RunConfig& c, std::string_view v) { c.apply_seed(to_u64("seed", v)); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      RLGAN_SIZE_FIELD("train_shapes", train_shapes),
      RLGAN_SIZE_FIELD("test_shapes", test_shapes),
      RLGAN_SIZE_FIELD("points", points),
      Field{"ratios", [](RunConfig& c, std::string_view v) { c.ratios = parse_ratio_list(v); },
            [](const RunConfig& c) {
              std::string s;
              for (double r : c.ratios) s += (s.empty() ? "" : ",") + fmt(r);
              return s;
            }},
      RLGAN_DOUBLE_FIELD("jitter", jitter),
      RLGAN_SIZE_FIELD("ae.epochs", ae.epochs),
      RLGAN_SIZE_FIELD("ae.batch_size", ae.batch_size),
      RLGAN_DOUBLE_FIELD("ae.learning_rate", ae.learning_rate),
      RLGAN_SIZE_FIELD("ae.output_points", ae.output_points),
      RLGAN_SIZE_FIELD("gan.iterations", gan.iterations),
      RLGAN_SIZE_FIELD("gan.batch_size", gan.batch_size),
      RLGAN_SIZE_FIELD("gan.n_critic", gan.n_critic),
      RLGAN_SIZE_FIELD("gan.latent_dim", gan.latent_dim),
      RLGAN_SIZE_FIELD("gan.log_every", gan.log_every),
      RLGAN_SIZE_FIELD("gan.gap_probe_steps", gan.gap_probe_steps),
      RLGAN_DOUBLE_FIELD("gan.lambda_gp", gan.lambda_gp),
      RLGAN_DOUBLE_FIELD("gan.learning_rate", gan.adam.learning_rate),
      RLGAN_SIZE_FIELD("agent.max_steps", agent.max_steps),
      RLGAN_SIZE_FIELD("agent.warmup_steps", agent.warmup_steps),
      RLGAN_SIZE_FIELD("agent.batch_size", agent.batch_size),
      RLGAN_SIZE_FIELD("agent.policy_delay", agent.policy_delay),
      RLGAN_SIZE_FIELD("agent.replay_capacity", agent.replay_capacity),
      RLGAN_SIZE_FIELD("agent.eval_every", agent.eval_every),
      RLGAN_SIZE_FIELD("agent.eval_episodes", agent_eval_episodes),
      RLGAN_DOUBLE_FIELD("agent.exploration_noise", agent.exploration_noise),
      RLGAN_DOUBLE_FIELD("agent.gamma", agent.gamma),
      RLGAN_DOUBLE_FIELD("agent.tau", agent.tau),
      RLGAN_DOUBLE_FIELD("agent.policy_noise", agent.policy_noise),
      RLGAN_DOUBLE_FIELD("agent.noise_clip", agent.noise_clip),
      RLGAN_DOUBLE_FIELD("agent.actor_lr", agent.actor_lr),
      RLGAN_DOUBLE_FIELD("agent.critic_lr", agent.critic_lr),
      RLGAN_SIZE_FIELD("classifier.epochs", classifier.epochs),
      RLGAN_SIZE_FIELD("classifier.batch_size", classifier.batch_size),
      RLGAN_DOUBLE_FIELD("classifier.learning_rate", classifier.learning_rate),
      RLGAN_DOUBLE_FIELD("reward.chamfer", reward.chamfer),
      RLGAN_DOUBLE_FIELD("reward.gfv", reward.gfv),
      RLGAN_DOUBLE_FIELD("reward.discriminator", reward.discriminator),
  };
  return table;
}

#undef RLGAN_SIZE_FIELD
#undef RLGAN_DOUBLE_FIELD

}  // namespace

std::vector<double> parse_ratio_list(std::string_view text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view item = trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    double r = to_double("ratios", item);
    if (r >= 1.0) r /= 100.0;  // percent form
    if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("ratios: '" + std::string(item) + "' is out of range");
    out.push_back(r);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  ae.seed = s;
  gan.seed = s;
  agent.seed = s;
  classifier.seed = s;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  c.apply_seed(c.seed);
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<PointCloud> agent_eval_partials(const Dataset& data, const RunConfig& cfg) {
  std::vector<PointCloud> out;
  const std::size_t n = std::min(cfg.agent_eval_episodes, data.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = cfg.ratios[i % cfg.ratios.size()];
    out.push_back(corrupt_cloud(data.test[i], {ratio, derive_seed(cfg.seed, "agent-eval", i)}));
  }
  return out;
}

std::vector<PointCloud> bench_partials(const Dataset& data, const RunConfig& cfg, std::size_t count) {
  if (data.test.empty()) throw std::invalid_argument("bench: empty test set");
  std::vector<PointCloud> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double ratio = cfg.ratios[i % cfg.ratios.size()];
    out.push_back(corrupt_cloud(data.test[i % data.test.size()], {ratio, derive_seed(cfg.seed, "bench", i)}));
  }
  return out;
}

LatencyStats measure_latency(const Pipeline& pipeline, std::span<const PointCloud> partials) {
  if (partials.empty()) throw std::invalid_argument("measure_latency: no shapes");
  const nn::Matrix<float> states = pipeline.autoencoder().encode_batch(partials);
  std::vector<double> ms(partials.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    pipeline.action_to_gfv(states.row(static_cast<Eigen::Index>(i)).transpose(), &ms[i]);
  }
  LatencyStats out;
  out.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(ms.size())));
  out.p99_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  out.max_ms = ms.back();
  return out;
}

}  // namespace rlgan
