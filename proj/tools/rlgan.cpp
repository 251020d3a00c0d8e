// Command-line driver: data generation, the three training stages, the
// classifier, completion, evaluation and latency benchmarking.

#include "CLI11.hpp"
#include "json.hpp"
#include "rlgan/agent.hpp"
#include "rlgan/autoencoder.hpp"
#include "rlgan/checkpoint.hpp"
#include "rlgan/latent_gan.hpp"
#include "rlgan/pipeline.hpp"
#include "rlgan/random.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>

namespace fs = std::filesystem;
using namespace rlgan;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::vector<std::string> overrides;
};

struct Workspace {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }
  fs::path eval() const { return root / "eval"; }
  fs::path ckpt(std::string_view name) const { return checkpoints() / (std::string(name) + ".ckpt"); }
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.apply_seed(*g.seed);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingModelError("checkpoint not found: " + path.string());
  return Checkpoint::load(path);
}

std::unique_ptr<AutoEncoder> load_ae(const Workspace& ws, const RunConfig& cfg) {
  auto ae = std::make_unique<AutoEncoder>(cfg.ae);
  ae->load(load_checkpoint(ws.ckpt("ae")));
  ae->freeze();
  return ae;
}

std::unique_ptr<LatentGan> load_gan(const Workspace& ws, const RunConfig& cfg) {
  auto gan = std::make_unique<LatentGan>(cfg.gan);
  gan->load(load_checkpoint(ws.ckpt("gan")));
  gan->freeze();
  return gan;
}

std::unique_ptr<Agent> load_agent(const Workspace& ws, const RunConfig& cfg) {
  auto agent = std::make_unique<Agent>(cfg.agent, kGfvDim, cfg.gan.latent_dim);
  agent->load(load_checkpoint(ws.ckpt("agent")));
  return agent;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Workspace& ws, const RunConfig& cfg) {
  const Dataset d = generate_dataset(cfg.seed, cfg.train_shapes, cfg.test_shapes, cfg.points);
  write_dataset(d, ws.data());
  nlohmann::json j{{"seed", cfg.seed},
                   {"train", d.train.size()},
                   {"test", d.test.size()},
                   {"points", cfg.points},
                   {"dir", ws.data().string()}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train_ae(const Workspace& ws, const RunConfig& cfg) {
  const Dataset d = read_dataset(ws.data());
  AutoEncoder ae(cfg.ae);
  std::string log = "epoch,mean_chamfer\n";
  const auto t0 = std::chrono::steady_clock::now();
  train_ae(ae, d.train, [&](std::size_t epoch, double loss) {
    log += std::to_string(epoch) + "," + fmt(loss) + "\n";
    if (epoch == 1 || epoch % 10 == 0 || epoch == cfg.ae.epochs) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "train-ae: epoch %zu loss %.6f (%.0fs)\n", epoch, loss, s);
    }
  });
  write_text(ws.logs() / "ae_loss.csv", log);
  Checkpoint ckpt;
  ae.save(ckpt);
  fs::create_directories(ws.checkpoints());
  ckpt.save(ws.ckpt("ae"));
  return 0;
}

int cmd_train_gan(const Workspace& ws, const RunConfig& cfg) {
  const Dataset d = read_dataset(ws.data());
  const auto ae = load_ae(ws, cfg);
  const nn::Matrix<float> gfvs = ae->encode_batch(d.train);
  LatentGan gan(cfg.gan);
  std::string log = "iter,d_real,d_fake,gp\n";
  const GanTrainResult res = train_gan(gan, gfvs, [&](const GanLogRow& r) {
    log += std::to_string(r.iteration) + "," + fmt(r.d_real) + "," + fmt(r.d_fake) + "," + fmt(r.gp) + "\n";
    if (r.iteration % 1000 == 0) {
      std::fprintf(stderr, "train-gan: iteration %zu D(real) %.4f D(fake) %.4f gp %.4f\n", r.iteration, r.d_real,
                   r.d_fake, r.gp);
    }
  });
  write_text(ws.logs() / "gan.csv", log);
  Checkpoint ckpt;
  gan.save(ckpt);
  fs::create_directories(ws.checkpoints());
  ckpt.save(ws.ckpt("gan"));

  const GanSampleCheck check = check_gan_samples(*ae, gan, d.train, 100, cfg.seed);
  nlohmann::json j{{"initial_gap", res.initial_gap},
                   {"final_gap", res.final_gap},
                   {"generator_steps", res.generator_steps},
                   {"critic_steps", res.critic_steps},
                   {"nearest_shape_threshold", check.threshold},
                   {"samples_within_threshold", check.within},
                   {"sample_max_distance", *std::max_element(check.sample_distances.begin(),
                                                             check.sample_distances.end())}};
  write_text(ws.logs() / "gan_summary.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train_agent(const Workspace& ws, const RunConfig& cfg) {
  const Dataset d = read_dataset(ws.data());
  const auto ae = load_ae(ws, cfg);
  const auto gan = load_gan(ws, cfg);
  const Environment env(*ae, *gan, cfg.reward);
  const std::vector<Episode> train =
      make_episodes(env, make_partials(d.train, cfg.ratios, cfg.seed, "agent-train"));
  const std::vector<Episode> eval = make_episodes(env, agent_eval_partials(d, cfg));

  Agent agent(cfg.agent, kGfvDim, cfg.gan.latent_dim);
  std::string log = "step,reward,L_CH,L_GFV,D_score\n";
  const AgentTrainResult res = train_agent(agent, env, train, eval, [&](const AgentLogRow& r) {
    log += std::to_string(r.step) + "," + fmt(r.reward.reward) + "," + fmt(r.reward.chamfer_loss) + "," +
           fmt(r.reward.gfv_loss) + "," + fmt(r.reward.d_score) + "\n";
  });
  std::string eval_log = "step,mean_reward\n";
  for (const EvalRow& e : res.evaluations) {
    eval_log += std::to_string(e.step) + "," + fmt(e.mean_reward) + "\n";
    std::fprintf(stderr, "train-agent: step %zu eval reward %.4f\n", e.step, e.mean_reward);
  }
  write_text(ws.logs() / "agent_rewards.csv", log);
  write_text(ws.logs() / "agent_eval.csv", eval_log);
  Checkpoint ckpt;
  agent.save(ckpt);
  fs::create_directories(ws.checkpoints());
  ckpt.save(ws.ckpt("agent"));

  const double baseline = evaluate_random_policy(env, eval, cfg.seed);
  nlohmann::json j{{"final_eval_reward", res.evaluations.back().mean_reward},
                   {"random_baseline_reward", baseline},
                   {"critic_updates", agent.critic_updates()},
                   {"actor_updates", agent.actor_updates()}};
  write_text(ws.logs() / "agent_summary.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train_classifier(const Workspace& ws, const RunConfig& cfg) {
  const Dataset d = read_dataset(ws.data());
  Classifier model(cfg.classifier);
  std::string log = "epoch,loss\n";
  train_classifier(model, d.train, d.train_labels, [&](std::size_t epoch, double loss) {
    log += std::to_string(epoch) + "," + fmt(loss) + "\n";
  });
  write_text(ws.logs() / "classifier.csv", log);
  Checkpoint ckpt;
  model.save(ckpt);
  fs::create_directories(ws.checkpoints());
  ckpt.save(ws.ckpt("classifier"));
  const double acc = evaluate_accuracy(model, d.test, d.test_labels);
  std::cout << nlohmann::json{{"test_accuracy_complete", acc}}.dump() << "\n";
  return 0;
}

int cmd_complete(const Workspace& ws, const RunConfig& cfg, const std::string& input, const std::string& mode_text,
                 std::string output) {
  const CompletionMode mode = parse_mode(mode_text);
  const PointCloud partial = read_xyz(input);
  const auto ae = load_ae(ws, cfg);
  std::unique_ptr<LatentGan> gan;
  std::unique_ptr<Agent> agent;
  if (mode != CompletionMode::ae) {
    gan = load_gan(ws, cfg);
    agent = load_agent(ws, cfg);
  }
  const Pipeline pipeline(*ae, gan.get(), agent ? &agent->actor() : nullptr);
  const CompletionResult r = pipeline.complete(partial, mode);
  if (output.empty()) output = (ws.root / "completed.xyz").string();
  fs::path out_path(output);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_xyz(out_path, r.output);

  nlohmann::json j{{"mode", mode_name(mode)}, {"path", path_name(r.path)}, {"output", output},
                   {"points", r.output.size()}};
  j["d_score_ae"] = std::isnan(r.d_score_ae) ? nlohmann::json(nullptr) : nlohmann::json(r.d_score_ae);
  j["d_score_gan"] = std::isnan(r.d_score_gan) ? nlohmann::json(nullptr) : nlohmann::json(r.d_score_gan);
  j["latency_ms"] = r.latency_ms;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_evaluate(const Workspace& ws, RunConfig cfg, const std::string& ratios, std::optional<double> jitter) {
  if (!ratios.empty()) cfg.ratios = parse_ratio_list(ratios);
  if (jitter) cfg.jitter = *jitter;
  const Dataset d = read_dataset(ws.data());
  const auto ae = load_ae(ws, cfg);
  const auto gan = load_gan(ws, cfg);
  const auto agent = load_agent(ws, cfg);
  std::optional<Classifier> cls;
  if (fs::exists(ws.ckpt("classifier"))) {
    cls.emplace(cfg.classifier);
    cls->load(Checkpoint::load(ws.ckpt("classifier")));
  }
  const Pipeline pipeline(*ae, gan.get(), &agent->actor());
  EvalOptions opts;
  opts.ratios = cfg.ratios;
  opts.jitter_sigma = cfg.jitter;
  opts.seed = cfg.seed;
  opts.classifier = cls ? &*cls : nullptr;
  const EvalReport report = evaluate_completion(pipeline, d.test, d.test_labels, opts);
  write_text(ws.eval() / "report.csv", report.to_csv());
  write_text(ws.eval() / "report.json", report.to_json());
  std::cout << report.to_csv();
  return 0;
}

int cmd_bench(const Workspace& ws, const RunConfig& cfg, std::size_t shapes) {
  const Dataset d = read_dataset(ws.data());
  const auto ae = load_ae(ws, cfg);
  const auto gan = load_gan(ws, cfg);
  const auto agent = load_agent(ws, cfg);
  const Pipeline pipeline(*ae, gan.get(), &agent->actor());

  const LatencyStats stats = measure_latency(pipeline, bench_partials(d, cfg, shapes));
  std::cout << nlohmann::json{{"shapes", shapes}, {"latency_ms_mean", stats.mean_ms}, {"latency_ms_p99", stats.p99_ms}}.dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud shape completion with an RL agent steering a latent GAN"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "key=value run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "run seed (overrides the config file)");
  app.add_option("--out", g.out, "workspace directory")->capture_default_str();
  app.add_option("--set", g.overrides, "override a config key: --set key=value")->take_all();

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test shapes");
  auto* tae = app.add_subcommand("train-ae", "train the point cloud autoencoder");
  auto* tgan = app.add_subcommand("train-gan", "train the latent GAN on encoded training shapes");
  auto* tagent = app.add_subcommand("train-agent", "train the agent against the frozen AE and GAN");
  auto* tcls = app.add_subcommand("train-classifier", "train the shape classifier on complete shapes");

  auto* complete = app.add_subcommand("complete", "complete one partial cloud");
  std::string input, mode = "hybrid", output;
  complete->add_option("--input", input, ".xyz partial cloud")->required()->check(CLI::ExistingFile);
  complete->add_option("--mode", mode, "vanilla, hybrid or ae")
      ->check(CLI::IsMember({"vanilla", "hybrid", "ae"}))
      ->capture_default_str();
  complete->add_option("--output", output, "output .xyz path (default <out>/completed.xyz)");

  auto* evaluate = app.add_subcommand("evaluate", "per-ratio completion report on the test set");
  std::string ratios;
  std::optional<double> jitter;
  evaluate->add_option("--ratios", ratios, "missing ratios in percent, e.g. 20,30,40,50,70");
  evaluate->add_option("--jitter", jitter, "Gaussian input noise sigma, clipped at 5 sigma");

  auto* bench = app.add_subcommand("bench", "actor + generator latency over many shapes");
  std::size_t bench_shapes = 1000;
  bench->add_option("--shapes", bench_shapes, "number of shapes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig cfg = resolve_config(g);
    const Workspace ws{g.out};
    if (gen->parsed()) return cmd_gen_data(ws, cfg);
    if (tae->parsed()) return cmd_train_ae(ws, cfg);
    if (tgan->parsed()) return cmd_train_gan(ws, cfg);
    if (tagent->parsed()) return cmd_train_agent(ws, cfg);
    if (tcls->parsed()) return cmd_train_classifier(ws, cfg);
    if (complete->parsed()) return cmd_complete(ws, cfg, input, mode, output);
    if (evaluate->parsed()) return cmd_evaluate(ws, cfg, ratios, jitter);
    if (bench->parsed()) return cmd_bench(ws, cfg, bench_shapes);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rlgan: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
