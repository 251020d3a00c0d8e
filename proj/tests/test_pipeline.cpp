#include "rlgan/pipeline.hpp"

#include <gtest/gtest.h>
#include "json.hpp"

#include <cmath>
#include <filesystem>

using namespace rlgan;

namespace {

struct Models {
  AutoEncoder ae;
  LatentGan gan;
  nn::Sequential<float> actor;

  Models() : ae(ae_config()), gan(gan_config()), actor(build_actor("actor", kGfvDim, 1, {16, 16})) {
    Rng rng(8);
    actor.init(rng);
    ae.freeze();
    gan.freeze();
    actor.freeze();
  }

  static AEConfig ae_config() {
    AEConfig c;
    c.output_points = 64;
    c.seed = 21;
    return c;
  }
  static GANConfig gan_config() {
    GANConfig c;
    c.seed = 22;
    return c;
  }
};

std::vector<PointCloud> test_shapes(std::size_t n, std::size_t points = 96) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_shape(kAllCategories[i % 4], points, 900 + i));
  return out;
}

}  // namespace

TEST(Modes, NamesRoundTrip) {
  for (auto m : {CompletionMode::vanilla, CompletionMode::hybrid, CompletionMode::ae}) {
    EXPECT_EQ(parse_mode(mode_name(m)), m);
  }
  EXPECT_THROW(parse_mode("best"), std::invalid_argument);
}

TEST(Pipeline, HybridTakesHigherCriticScore) {
  const Models m;
  const Pipeline p(m.ae, &m.gan, &m.actor);
  std::size_t gan_paths = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const PointCloud partial = corrupt_cloud(sample_shape(kAllCategories[i % 4], 96, i), {0.5, i});
    const auto r = p.complete_hybrid(partial);
    const Gfv ae_gfv = m.ae.encode(partial);
    const Gfv gan_gfv = p.action_to_gfv(ae_gfv);
    EXPECT_EQ(r.d_score_ae, static_cast<double>(m.gan.discriminate(ae_gfv)));
    EXPECT_EQ(r.d_score_gan, static_cast<double>(m.gan.discriminate(gan_gfv)));
    const bool gan_wins = r.d_score_gan >= r.d_score_ae;
    EXPECT_EQ(r.path, gan_wins ? CompletionPath::gan : CompletionPath::ae);
    EXPECT_EQ(r.output, m.ae.decode(gan_wins ? gan_gfv : ae_gfv));
    gan_paths += gan_wins ? 1 : 0;
  }
  RecordProperty("gan_paths", static_cast<int>(gan_paths));
}

TEST(Pipeline, VanillaDeterministicAndSized) {
  const Models m;
  const Pipeline p(m.ae, &m.gan, &m.actor);
  const PointCloud partial = corrupt_cloud(sample_shape(ShapeCategory::car, 96, 3), {0.3, 1});
  const auto a = p.complete_vanilla(partial);
  const auto b = p.complete(partial, CompletionMode::vanilla);
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(a.output.size(), 64u);
  EXPECT_EQ(a.path, CompletionPath::gan);
  EXPECT_GE(a.latency_ms, 0.0);
  EXPECT_TRUE(std::isnan(a.d_score_ae));
}

TEST(Pipeline, AeModeNeedsNoGan) {
  const Models m;
  const Pipeline p(m.ae, nullptr, nullptr);
  const PointCloud partial = corrupt_cloud(sample_shape(ShapeCategory::table, 96, 3), {0.3, 1});
  const auto r = p.complete(partial, CompletionMode::ae);
  EXPECT_EQ(r.output, m.ae.decode(m.ae.encode(partial)));
  EXPECT_EQ(r.path, CompletionPath::ae);
  EXPECT_THROW(p.complete(partial, CompletionMode::vanilla), MissingModelError);
  EXPECT_THROW(p.complete(partial, CompletionMode::hybrid), MissingModelError);
}

TEST(Pipeline, RejectsEmptyInput) {
  const Models m;
  const Pipeline p(m.ae, &m.gan, &m.actor);
  EXPECT_THROW(p.complete(PointCloud{}, CompletionMode::hybrid), GeometryError);
}

// ---------------------------------------------------------------------------

TEST(Classifier, UntrainedRefuses) {
  ClassifierConfig cfg;
  const Classifier c(cfg);
  EXPECT_THROW(c.classify(sample_shape(ShapeCategory::chair, 64, 1)), std::logic_error);
}

TEST(Classifier, LearnsSyntheticCategories) {
  ClassifierConfig cfg;
  cfg.point_channels = {16, 32};
  cfg.hidden = 16;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.seed = 4;
  Classifier c(cfg);
  const auto train = test_shapes(48, 64);
  std::vector<ShapeCategory> labels;
  for (std::size_t i = 0; i < train.size(); ++i) labels.push_back(kAllCategories[i % 4]);
  const auto history = train_classifier(c, train, labels);
  EXPECT_LT(history.back(), history.front());
  EXPECT_GE(evaluate_accuracy(c, train, labels), 0.9);
}

TEST(SoftmaxCrossEntropy, ValueAndGradient) {
  nn::Matrix<float> logits(2, 4);
  logits << 0, 0, 0, 0, 1, 2, 3, 4;
  const std::vector<std::size_t> labels{1, 3};
  nn::Matrix<float> grad;
  const double loss = softmax_cross_entropy(logits, labels, grad);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0) + std::exp(4.0);
  EXPECT_NEAR(loss, (std::log(4.0) + (std::log(z) - 4.0)) / 2.0, 1e-6);
  EXPECT_NEAR(grad(0, 1), (0.25 - 1.0) / 2.0, 1e-6);
  EXPECT_NEAR(grad(1, 0), std::exp(1.0) / z / 2.0, 1e-6);
  EXPECT_NEAR(grad.sum(), 0.0, 1e-6);
  EXPECT_THROW(softmax_cross_entropy(logits, std::vector<std::size_t>{1}, grad), nn::ShapeError);
  EXPECT_THROW(softmax_cross_entropy(logits, std::vector<std::size_t>{1, 4}, grad), std::out_of_range);
}

// ---------------------------------------------------------------------------

TEST(Jitter, ClippedAndSeeded) {
  const PointCloud c = sample_shape(ShapeCategory::airplane, 400, 2);
  const PointCloud a = jitter_cloud(c, 0.01, 5);
  EXPECT_EQ(a, jitter_cloud(c, 0.01, 5));
  double max_dev = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int k = 0; k < 3; ++k) max_dev = std::max(max_dev, std::abs(a.points()[i][k] - c.points()[i][k]));
  }
  EXPECT_LE(max_dev, 0.05 + 1e-12);
  EXPECT_GT(max_dev, 0.0);
  EXPECT_EQ(jitter_cloud(c, 0.0, 5), c);
}

TEST(Evaluate, ReportShapeAndJson) {
  const Models m;
  const Pipeline p(m.ae, &m.gan, &m.actor);
  const auto shapes = test_shapes(8);
  std::vector<ShapeCategory> labels;
  for (std::size_t i = 0; i < shapes.size(); ++i) labels.push_back(kAllCategories[i % 4]);
  EvalOptions opt;
  opt.ratios = {0.2, 0.7};
  opt.seed = 3;
  const EvalReport report = evaluate_completion(p, shapes, labels, opt);
  // raw + three modes per ratio, plus the ground-truth row.
  ASSERT_EQ(report.rows.size(), 2u * 4u + 1u);
  const auto* gt = report.find(0.0, "gt");
  ASSERT_NE(gt, nullptr);
  EXPECT_EQ(gt->mean_chamfer_normalized, 0.0);
  ASSERT_NE(report.find(0.7, "hybrid"), nullptr);
  EXPECT_FALSE(report.find(0.7, "hybrid")->accuracy.has_value());
  EXPECT_TRUE(report.find(0.7, "vanilla")->latency_ms_mean.has_value());
  EXPECT_LE(report.find(0.7, "hybrid")->gan_path_count, 8u);

  const auto json = nlohmann::json::parse(report.to_json());
  ASSERT_TRUE(json.contains("rows"));
  ASSERT_EQ(json["rows"].size(), report.rows.size());
  for (const auto& row : json["rows"]) {
    for (const char* key : {"ratio", "mode", "mean_chamfer_normalized", "accuracy", "latency_ms_mean", "shapes"}) {
      EXPECT_TRUE(row.contains(key)) << key;
    }
  }
  const std::string csv = report.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "ratio,mode,mean_chamfer_normalized,accuracy,latency_ms_mean,shapes,gan_path_count");

  // Everything except the wall-clock column is reproducible.
  const EvalReport again = evaluate_completion(p, shapes, labels, opt);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    EXPECT_EQ(again.rows[i].mean_chamfer_normalized, report.rows[i].mean_chamfer_normalized);
    EXPECT_EQ(again.rows[i].gan_path_count, report.rows[i].gan_path_count);
  }
}

TEST(Evaluate, NestedCropsAreMonotoneForRaw) {
  const Models m;
  const Pipeline p(m.ae, nullptr, nullptr);
  const auto shapes = test_shapes(8);
  std::vector<ShapeCategory> labels(shapes.size(), ShapeCategory::table);
  EvalOptions opt;
  opt.modes = {CompletionMode::ae};
  const EvalReport report = evaluate_completion(p, shapes, labels, opt);
  double prev = 0.0;
  for (double r : opt.ratios) {
    const double v = report.find(r, "raw")->mean_chamfer_normalized;
    EXPECT_GT(v, prev);
    prev = v;
  }
}

// ---------------------------------------------------------------------------

TEST(Dataset, DeterministicAndRoundTrips) {
  const Dataset a = generate_dataset(3, 8, 4, 64);
  const Dataset b = generate_dataset(3, 8, 4, 64);
  ASSERT_EQ(a.train.size(), 8u);
  ASSERT_EQ(a.test.size(), 4u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.train_labels[1], ShapeCategory::chair);
  const auto dir = std::filesystem::temp_directory_path() / "rlgan_dataset_test";
  std::filesystem::remove_all(dir);
  write_dataset(a, dir);
  const Dataset back = read_dataset(dir);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.train.size(), a.train.size());
  EXPECT_EQ(back.test_labels, a.test_labels);
  EXPECT_EQ(back.train_seeds, a.train_seeds);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_LT(chamfer_distance(a.train[i], back.train[i]), 1e-12);
  }
}

TEST(Dataset, ReadMissingDirectoryFails) {
  EXPECT_ANY_THROW(read_dataset("/nonexistent/rlgan"));
}

// ---------------------------------------------------------------------------

TEST(RunConfig, ParseAndOverride) {
  const RunConfig c = RunConfig::parse("# desk run\nseed = 9\nae.epochs=12  # short\nratios=20,70\n\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.ae.seed, 9u);
  EXPECT_EQ(c.agent.seed, 9u);
  EXPECT_EQ(c.ae.epochs, 12u);
  ASSERT_EQ(c.ratios.size(), 2u);
  EXPECT_DOUBLE_EQ(c.ratios[1], 0.7);
  RunConfig d = c;
  d.set("gan.lambda_gp", "5");
  EXPECT_EQ(d.gan.lambda_gp, 5.0);
  const RunConfig e = RunConfig::parse(c.to_text());
  EXPECT_EQ(e.to_text(), c.to_text());
}

TEST(RunConfig, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.train_shapes, 400u);
  EXPECT_EQ(c.points, 512u);
  EXPECT_EQ(c.ae.epochs, 300u);
  EXPECT_EQ(c.gan.iterations, 20000u);
  EXPECT_EQ(c.gan.n_critic, 5u);
  EXPECT_EQ(c.agent.batch_size, 100u);
  EXPECT_EQ(c.reward.chamfer, 100.0);
}

TEST(RunConfig, Errors) {
  RunConfig c;
  EXPECT_THROW(c.set("ae.nope", "1"), std::invalid_argument);
  EXPECT_THROW(c.set("ae.epochs", "ten"), std::invalid_argument);
  try {
    RunConfig::parse("seed=1\nbogus\n");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(RatioList, PercentAndFractionForms) {
  EXPECT_EQ(parse_ratio_list("20,30"), (std::vector<double>{0.2, 0.3}));
  EXPECT_EQ(parse_ratio_list("0.5"), (std::vector<double>{0.5}));
  EXPECT_THROW(parse_ratio_list("0"), std::invalid_argument);
  EXPECT_THROW(parse_ratio_list("20,,30"), std::invalid_argument);
}
