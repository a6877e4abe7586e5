// dynakf: simulate, train, evaluate, predict, and probe learned Kalman
// dynamical models on synthetic worlds.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dynakf/config.hpp"
#include "dynakf/evalkit.hpp"
#include "dynakf/filter.hpp"
#include "dynakf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dynakf;

namespace {

constexpr const char* kToolVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
};

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig cfg =
      opts.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed_set) cfg.seed = opts.seed_override;
  if (const char* env = std::getenv("DYNAKF_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::ios_base::failure("cannot write " + path.string());
  os << text;
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

/// Manifest of one run. Wall-clock timings go to timing.log instead so that
/// re-runs with the same config and seed are byte-identical.
void write_manifest(const fs::path& dir, const std::string& command,
                    const ExperimentConfig& cfg, const std::vector<std::string>& outputs,
                    const json& extra = json::object()) {
  json j;
  j["tool"] = "dynakf";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["config"] = json::parse(cfg.to_json());
  j["config"].erase("out_dir");  // a locator, not an experiment parameter
  j["outputs"] = outputs;
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

void write_timing(const fs::path& dir, double seconds) {
  std::ofstream os(dir / "timing.log", std::ios::app);
  os << "wall_seconds=" << seconds << "\n";
}

std::vector<Episode> load_dataset(const std::string& data_dir, SystemSpec* spec_out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (entry.path().extension() == ".bin" &&
        entry.path().filename().string().rfind("ep_", 0) == 0) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no ep_*.bin episodes found in " + data_dir);
  std::vector<Episode> episodes;
  for (const auto& f : files) {
    episodes.push_back(load_episode_binary(f.string(), episodes.empty() ? spec_out : nullptr));
  }
  return episodes;
}

int cmd_simulate(const CommonOpts& opts, int episodes_override, int length_override) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(opts);
  if (episodes_override >= 0) cfg.episodes = episodes_override;
  if (length_override > 0) cfg.episode_length = length_override;
  if (cfg.out_dir.empty()) throw ConfigError("simulate: --out (or out_dir in config) required");
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> outputs;
  for (int i = 0; i < cfg.episodes; ++i) {
    RngStream rng = RngStream(cfg.seed).split(static_cast<std::uint64_t>(i));
    Episode ep = generate(cfg.system, cfg.episode_length, rng);
    ep.seed = rng.seed();
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%05d", i);
    const fs::path jsonl = fs::path(cfg.out_dir) / (std::string(name) + ".jsonl");
    const fs::path bin = fs::path(cfg.out_dir) / (std::string(name) + ".bin");
    write_text(jsonl, episode_to_jsonl(ep, cfg.system));
    save_episode_binary(bin.string(), ep, cfg.system);
    outputs.push_back(jsonl.filename().string());
    outputs.push_back(bin.filename().string());
  }
  write_manifest(cfg.out_dir, "simulate", cfg, outputs);
  write_timing(cfg.out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "simulate: wrote " << cfg.episodes << " episodes to " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir, const std::string& mode,
              const std::string& resume_path, bool baseline) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(opts);
  if (cfg.out_dir.empty()) throw ConfigError("train: --out required");
  SystemSpec data_spec;
  std::vector<Episode> episodes = load_dataset(data_dir, &data_spec);
  if (!episodes.empty() && episodes[0].obs[0].size() != cfg.system.obs_dim) {
    // keep the model consistent with the data on disk
    cfg.system = data_spec;
  }
  int obs_total = 0;
  for (int d : cfg.model.modality_obs_dims) obs_total += d;
  if (obs_total != episodes[0].obs[0].size()) {
    throw ConfigError("model modality_obs_dims sum " + std::to_string(obs_total) +
                      " != dataset obs dim " + std::to_string(episodes[0].obs[0].size()));
  }
  if (!mode.empty()) {
    if (mode == "dirichlet") {
      cfg.model.kind = TransitionKind::kDirichlet;
    } else if (mode == "deterministic") {
      cfg.model.kind = TransitionKind::kDeterministic;
    } else {
      throw ConfigError("unknown --mode: " + mode);
    }
  }
  cfg.model.init_seed = cfg.seed;
  fs::create_directories(cfg.out_dir);

  TrainHistory history;
  std::uint64_t final_step = 0;
  if (baseline) {
    LstmBaselineModel model = make_baseline(cfg.model);
    BaselineTrainer trainer(model, cfg.train);
    if (!resume_path.empty()) trainer.resume(load_checkpoint(resume_path));
    history = trainer.run(episodes, cfg.out_dir);
    final_step = trainer.step_count();
    save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), trainer.checkpoint());
  } else {
    NeuralKalmanModel model = make_model(cfg.model);
    Trainer trainer(model, cfg.train);
    if (!resume_path.empty()) trainer.resume(load_checkpoint(resume_path));
    history = trainer.run(episodes, cfg.out_dir);
    final_step = trainer.step_count();
    save_checkpoint((fs::path(cfg.out_dir) / "final.ckpt").string(), trainer.checkpoint());
  }
  write_text(fs::path(cfg.out_dir) / "history.csv", history.to_csv());

  json extra;
  extra["mode"] = baseline ? "lstm-baseline"
                           : (cfg.model.kind == TransitionKind::kDirichlet ? "dirichlet"
                                                                           : "deterministic");
  extra["train_steps"] = final_step;
  std::vector<std::string> outputs = {"final.ckpt", "history.csv"};
  write_manifest(cfg.out_dir, baseline ? "train-baseline" : "train", cfg, outputs, extra);
  write_timing(cfg.out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << (baseline ? "train-baseline" : "train") << ": " << history.loss.size()
            << " epochs, final loss "
            << (history.loss.empty() ? 0.0 : history.loss.back()) << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(opts);
  if (cfg.out_dir.empty()) throw ConfigError("eval: --out required");
  NeuralKalmanModel model = model_from_checkpoint(load_checkpoint(ckpt_path));
  std::vector<Episode> episodes = load_dataset(data_dir, nullptr);
  fs::create_directories(cfg.out_dir);

  std::string csv = "episode,t_rel_pct,r_rel_deg_per_100m,posterior_rmse\n";
  double t_acc = 0.0, r_acc = 0.0;
  int used = 0;
  RngStream root(cfg.seed);
  for (size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    RngStream rng = root.split(e);
    SampleContext ctx;
    ctx.rng = &rng;
    SequenceRun run = filter_sequence(model, inputs, ctx);
    std::vector<Pose6> est_rel;
    double sq = 0.0;
    size_t n = 0;
    for (int t = 0; t < ep.length(); ++t) {
      Pose6 p{0, 0, 0, 0, 0, 0};
      const Tensor& y = run.steps[static_cast<size_t>(t)].y_post;
      for (int c = 0; c < 6; ++c) p[static_cast<size_t>(c)] = y.v[static_cast<size_t>(c)];
      est_rel.push_back(p);
      for (int c = 0; c < 6; ++c) {
        const double d = ep.targets[static_cast<size_t>(t)][static_cast<size_t>(c)] - p[static_cast<size_t>(c)];
        sq += d * d;
        ++n;
      }
    }
    Trajectory gt;
    gt.poses = ep.abs_poses;
    Trajectory est = integrate_poses(est_rel);
    DriftMetrics dm = drift_metrics(gt, est, cfg.segment_lengths);
    const double rmse = std::sqrt(sq / static_cast<double>(std::max<size_t>(1, n)));
    char row[160];
    std::snprintf(row, sizeof(row), "%zu,%.17g,%.17g,%.17g\n", e, dm.t_rel, dm.r_rel, rmse);
    csv += row;
    if (!dm.empty) {
      t_acc += dm.t_rel;
      r_acc += dm.r_rel;
      ++used;
    }
    if (e == 0) {
      write_text(fs::path(cfg.out_dir) / "traj_gt_ep0.csv", trajectory_to_csv(gt));
      write_text(fs::path(cfg.out_dir) / "traj_est_ep0.csv", trajectory_to_csv(est));
    }
  }
  write_text(fs::path(cfg.out_dir) / "drift.csv", csv);
  json j;
  j["episodes"] = episodes.size();
  j["mean_t_rel_pct"] = used > 0 ? t_acc / used : 0.0;
  j["mean_r_rel_deg_per_100m"] = used > 0 ? r_acc / used : 0.0;
  j["segment_lengths"] = cfg.segment_lengths;
  write_text(fs::path(cfg.out_dir) / "drift.json", j.dump(2) + "\n");
  write_manifest(cfg.out_dir, "eval", cfg,
                 {"drift.csv", "drift.json", "traj_gt_ep0.csv", "traj_est_ep0.csv"});
  write_timing(cfg.out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "eval: mean t_rel " << (used > 0 ? t_acc / used : 0.0) << "% over "
            << episodes.size() << " episodes\n";
  return kExitOk;
}

int cmd_predict(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data_dir,
                bool baseline) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(opts);
  if (cfg.out_dir.empty()) throw ConfigError("predict: --out required");
  std::vector<Episode> episodes = load_dataset(data_dir, nullptr);
  fs::create_directories(cfg.out_dir);

  PredictionResult result;
  if (baseline) {
    LstmBaselineModel model = baseline_from_checkpoint(load_checkpoint(ckpt_path));
    result = prediction_protocol_baseline(model, episodes, cfg.pred_init, cfg.pred_horizons);
  } else {
    NeuralKalmanModel model = model_from_checkpoint(load_checkpoint(ckpt_path));
    result = prediction_protocol(model, episodes, cfg.pred_init, cfg.pred_horizons, cfg.seed);
  }

  std::string csv = "horizon,translation_rmse\n";
  for (const auto& [h, rmse] : result.rmse_by_horizon) {
    char row[64];
    std::snprintf(row, sizeof(row), "%d,%.17g\n", h, rmse);
    csv += row;
  }
  write_text(fs::path(cfg.out_dir) / "prediction_rmse.csv", csv);
  std::vector<std::string> outputs = {"prediction_rmse.csv"};
  for (const auto& [h, trace] : result.best_by_horizon) {
    std::vector<Pose6> rel = trace.predicted;
    const std::string name = "best_h" + std::to_string(h) + ".csv";
    write_text(fs::path(cfg.out_dir) / name, trajectory_to_csv(integrate_poses(rel)));
    outputs.push_back(name);
  }
  for (const auto& [h, trace] : result.worst_by_horizon) {
    std::vector<Pose6> rel = trace.predicted;
    const std::string name = "worst_h" + std::to_string(h) + ".csv";
    write_text(fs::path(cfg.out_dir) / name, trajectory_to_csv(integrate_poses(rel)));
    outputs.push_back(name);
  }
  write_manifest(cfg.out_dir, "predict", cfg, outputs);
  write_timing(cfg.out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  for (const auto& [h, rmse] : result.rmse_by_horizon) {
    std::cout << "predict: horizon " << h << " translation RMSE " << rmse << "\n";
  }
  return kExitOk;
}

int cmd_probe(const CommonOpts& opts, const std::string& ckpt_path) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(opts);
  if (cfg.out_dir.empty()) throw ConfigError("probe: --out required");
  NeuralKalmanModel model = model_from_checkpoint(load_checkpoint(ckpt_path));
  CorruptionSpec schedule = staircase_schedule(cfg.probe_length);
  GainProbeReport rep =
      gain_probe(model, cfg.system, schedule, cfg.probe_episodes, cfg.probe_length, cfg.seed);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "probe.csv", rep.to_csv());
  write_text(fs::path(cfg.out_dir) / "probe_correlations.json", rep.to_json() + "\n");
  write_manifest(cfg.out_dir, "probe", cfg, {"probe.csv", "probe_correlations.json"});
  write_timing(cfg.out_dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << "probe: Spearman K=" << rep.rho_k << " R=" << rep.rho_r << " Q=" << rep.rho_q
            << " |r|=" << rep.rho_innov << "\n";
  return kExitOk;
}

int cmd_grad_check(const std::string& mode) {
  // tiny model: d=3, two modalities of 4 raw dims, window=3
  ModelConfig mc;
  mc.d = 3;
  mc.modality_obs_dims = {4, 4};
  mc.modality_feat_dims = {2, 1};
  mc.encoder_hidden = 6;
  mc.transition_hidden = 5;
  mc.layout = MatrixLayout::kDiagonal;
  mc.kind = mode == "deterministic" ? TransitionKind::kDeterministic : TransitionKind::kDirichlet;
  mc.init_seed = 11;
  NeuralKalmanModel model = make_model(mc);

  SystemSpec spec;
  spec.kind = SystemKind::kPlanarOdometry;
  spec.latent_dim = 2;
  spec.obs_dim = 8;
  spec.modality_obs_dims = {4, 4};
  RngStream rng(3);
  Episode ep = gen_planar_odometry(spec, 3, rng);
  auto steps = episode_inputs(ep, mc.modality_obs_dims);
  std::vector<Tensor> targets;
  for (const auto& p : ep.targets) targets.push_back(pose_tensor(p));

  const double tol = mc.kind == TransitionKind::kDeterministic ? 1e-4 : 1e-3;
  auto report = model_grad_check(model, steps, targets, 1e-6, tol);
  std::cout << report.summary() << "\n";
  return report.all_pass ? kExitOk : kExitNumeric;
}

int cmd_stability_report(const CommonOpts& opts, int dim, int samples) {
  ExperimentConfig cfg = load_config(opts);
  ModelConfig mc;
  mc.d = dim;
  mc.modality_obs_dims = {4 * dim};
  mc.modality_feat_dims = {dim};
  mc.layout = MatrixLayout::kFull;
  mc.kind = TransitionKind::kDirichlet;
  mc.init_seed = cfg.seed;
  NeuralKalmanModel model = make_model(mc);

  RngStream rng(cfg.seed);
  double worst = 0.0;
  int contractive = 0;
  std::string example;
  LstmState lstm = model.transition.initial_state();
  for (int i = 0; i < samples; ++i) {
    Tensor z = sample_gaussian({dim}, 0.0, 1.0, rng);
    SampleContext ctx;
    ctx.rng = &rng;
    TransitionPacket pkt = model.transition.step(z, lstm, ctx);
    StabilityReport rep = stability_check(pkt.a);
    worst = std::max(worst, rep.inf_norm);
    if (rep.contractive) ++contractive;
    if (i == 0) example = rep.to_json();
  }
  json j;
  j["samples"] = samples;
  j["dim"] = dim;
  j["contractive"] = contractive;
  j["max_inf_norm"] = worst;
  j["example_report"] = json::parse(example);
  const std::string out = j.dump(2);
  std::cout << out << "\n";
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "stability.json", out + "\n");
  }
  return contractive == samples ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynakf: learned Kalman dynamical models on synthetic worlds"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string data_dir, ckpt_path, mode, resume_path;
  int episodes_override = -1, length_override = 0;
  int dim = 4, samples = 1000;
  bool baseline = false;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", opts.config_path, "experiment config (.toml or .json)");
    auto* o = cmd->add_option("--out", opts.out_dir, "output directory");
    if (needs_out) o->required();
    cmd->add_option("--seed", opts.seed_override, "seed override")
        ->each([&](const std::string&) { opts.seed_set = true; });
  };

  auto* sim = app.add_subcommand("simulate", "generate synthetic episodes");
  add_common(sim, true);
  sim->add_option("--episodes", episodes_override, "episode count override");
  sim->add_option("--length", length_override, "episode length override");

  auto* train = app.add_subcommand("train", "train the neural Kalman model");
  add_common(train, true);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--mode", mode, "dirichlet | deterministic");
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* trainb = app.add_subcommand("train-baseline", "train the LSTM baseline");
  add_common(trainb, true);
  trainb->add_option("--data", data_dir, "dataset directory")->required();
  trainb->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "drift metrics on a dataset");
  add_common(eval, true);
  eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();

  auto* predict = app.add_subcommand("predict", "open-loop prediction protocol");
  add_common(predict, true);
  predict->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  predict->add_option("--data", data_dir, "dataset directory")->required();
  predict->add_flag("--baseline", baseline, "checkpoint is an LSTM baseline");

  auto* probe = app.add_subcommand("probe", "Kalman-gain interpretability probe");
  add_common(probe, true);
  probe->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full model");
  gc->add_option("--mode", mode, "dirichlet | deterministic")->default_val("dirichlet");

  auto* stab = app.add_subcommand("stability-report", "sample transitions and check stability");
  add_common(stab, false);
  stab->add_option("--dim", dim, "latent dimension");
  stab->add_option("--samples", samples, "number of sampled transitions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(opts, episodes_override, length_override);
    if (train->parsed()) return cmd_train(opts, data_dir, mode, resume_path, false);
    if (trainb->parsed()) return cmd_train(opts, data_dir, "", resume_path, true);
    if (eval->parsed()) return cmd_eval(opts, ckpt_path, data_dir);
    if (predict->parsed()) return cmd_predict(opts, ckpt_path, data_dir, baseline);
    if (probe->parsed()) return cmd_probe(opts, ckpt_path);
    if (gc->parsed()) return cmd_grad_check(mode);
    if (stab->parsed()) return cmd_stability_report(opts, dim, samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NonFiniteError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const TrainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
