#include "dynakf/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace dynakf {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void shuffle_indices(std::vector<size_t>& idx, RngStream& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

std::vector<bool> prior_valid_mask(size_t t_len) {
  std::vector<bool> mask(t_len, true);
  if (!mask.empty()) mask[0] = false;  // the first step has no predicted prior
  return mask;
}

double grad_l2(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g.v) s += x * x;
  }
  return std::sqrt(s);
}

}  // namespace

void TrainConfig::validate() const {
  if (window < 2) throw TrainError("train config: window must be >= 2");
  if (batch < 1) throw TrainError("train config: batch must be >= 1");
  if (!(lr > 0.0)) throw TrainError("train config: lr must be > 0");
  if (epochs < 0) throw TrainError("train config: epochs must be >= 0");
}

std::string TrainHistory::to_csv() const {
  std::string s = "epoch,loss,val_rmse,grad_norm,seconds\n";
  for (size_t i = 0; i < loss.size(); ++i) {
    s += std::to_string(i + 1) + "," + fmt17(loss[i]) + "," + fmt17(val_rmse[i]) + "," +
         fmt17(grad_norm[i]) + "," + fmt17(seconds[i]) + "\n";
  }
  return s;
}

std::vector<WindowRef> make_windows(const Episode& ep, int window, int stride) {
  if (window < 1 || stride < 1) throw TrainError("make_windows: window and stride must be >= 1");
  if (ep.length() < window) {
    throw TrainError("make_windows: episode length " + std::to_string(ep.length()) +
                     " shorter than window " + std::to_string(window));
  }
  std::vector<WindowRef> out;
  for (int b = 0; b + window <= ep.length(); b += stride) {
    out.push_back({&ep, b, window});
  }
  return out;
}

std::vector<StepInput> window_inputs(const WindowRef& w, const std::vector<int>& modality_dims) {
  auto all = episode_inputs(*w.episode, modality_dims);
  return std::vector<StepInput>(all.begin() + w.begin, all.begin() + w.begin + w.length);
}

std::vector<Tensor> window_targets(const WindowRef& w) {
  std::vector<Tensor> out;
  for (int t = w.begin; t < w.begin + w.length; ++t) {
    out.push_back(pose_tensor(w.episode->targets[static_cast<size_t>(t)]));
  }
  return out;
}

EpisodeSplit split_episodes(const std::vector<Episode>& episodes, double val_fraction) {
  EpisodeSplit split;
  const int k = val_fraction > 0.0 ? std::max(2, static_cast<int>(std::lround(1.0 / val_fraction)))
                                   : 0;
  for (size_t i = 0; i < episodes.size(); ++i) {
    if (k > 0 && i % static_cast<size_t>(k) == 0 && episodes.size() > 1) {
      split.val.push_back(&episodes[i]);
    } else {
      split.train.push_back(&episodes[i]);
    }
  }
  if (split.train.empty() && !split.val.empty()) {
    split.train.push_back(split.val.back());
    split.val.pop_back();
  }
  return split;
}

double validation_rmse(const NeuralKalmanModel& model, const std::vector<const Episode*>& episodes,
                       std::uint64_t seed) {
  if (episodes.empty()) return 0.0;
  RngStream root(seed);
  double sq = 0.0;
  size_t count = 0;
  for (size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = *episodes[e];
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    RngStream rng = root.split(e);
    SampleContext ctx;
    ctx.rng = &rng;
    SequenceRun run = filter_sequence(model, inputs, ctx);
    for (int t = 0; t < ep.length(); ++t) {
      const Tensor gt = pose_tensor(ep.targets[static_cast<size_t>(t)]);
      const Tensor& y = run.steps[static_cast<size_t>(t)].y_post;
      for (int c = 0; c < gt.size(); ++c) {
        const double d = gt.v[static_cast<size_t>(c)] - y.v[static_cast<size_t>(c)];
        sq += d * d;
        ++count;
      }
    }
  }
  return std::sqrt(sq / static_cast<double>(std::max<size_t>(1, count)));
}

double validation_rmse_baseline(const LstmBaselineModel& model,
                                const std::vector<const Episode*>& episodes) {
  if (episodes.empty()) return 0.0;
  double sq = 0.0;
  size_t count = 0;
  for (const Episode* epp : episodes) {
    const Episode& ep = *epp;
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    auto outputs = baseline_rollout(model, inputs, 0);
    for (int t = 0; t < ep.length(); ++t) {
      const Tensor gt = pose_tensor(ep.targets[static_cast<size_t>(t)]);
      const Tensor& y = outputs[static_cast<size_t>(t)];
      for (int c = 0; c < gt.size(); ++c) {
        const double d = gt.v[static_cast<size_t>(c)] - y.v[static_cast<size_t>(c)];
        sq += d * d;
        ++count;
      }
    }
  }
  return std::sqrt(sq / static_cast<double>(std::max<size_t>(1, count)));
}

Trainer::Trainer(NeuralKalmanModel& model, TrainConfig cfg) : model_(model), cfg_(cfg) {
  cfg_.validate();
  AdamConfig ac;
  ac.lr = cfg_.lr;
  adam_ = Adam(model_.params(), ac);
}

void Trainer::resume(const Checkpoint& ckpt) {
  restore_params(model_.params(), ckpt);
  adam_.load_state(ckpt.tensors, static_cast<std::int64_t>(ckpt.train_step));
}

std::uint64_t Trainer::step_count() const { return static_cast<std::uint64_t>(adam_.step_count()); }

Checkpoint Trainer::checkpoint() {
  Checkpoint ck = model_checkpoint(model_, step_count());
  adam_.save_state(ck.tensors);
  return ck;
}

template <typename Model, typename LossFn, typename ValFn, typename CkptFn>
static TrainHistory train_loop(Model& model, const TrainConfig& cfg,
                               const std::vector<Episode>& episodes, Adam& adam,
                               const LossFn& window_loss, const ValFn& val_fn,
                               const CkptFn& ckpt_fn, const std::string& ckpt_dir) {
  cfg.validate();
  if (episodes.empty()) throw TrainError("train: empty dataset");
  auto split = split_episodes(episodes, cfg.val_fraction);
  std::vector<WindowRef> windows;
  for (const Episode* ep : split.train) {
    auto w = make_windows(*ep, cfg.window);
    windows.insert(windows.end(), w.begin(), w.end());
  }
  if (windows.empty()) throw TrainError("train: no windows (episodes shorter than window?)");

  auto params = model.params();
  TrainHistory history;
  RngStream shuffle_rng = RngStream(cfg.seed).split(1);
  RngStream sample_rng = RngStream(cfg.seed).split(2);
  const double t_start = now_seconds();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, shuffle_rng);

    double epoch_loss = 0.0;
    double epoch_grad_norm = 0.0;
    size_t batches = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(cfg.batch));
      std::vector<Tensor> grad_sum;
      double batch_loss = 0.0;
      size_t members = 0;
      for (size_t bi = cursor; bi < batch_end; ++bi) {
        const WindowRef& w = windows[order[bi]];
        try {
          Tape tape;
          TapeScope scope(tape);
          model.bind(tape);
          Tensor loss = window_loss(w, sample_rng);
          Gradients grads = tape.backward(loss);
          batch_loss += loss.item();
          size_t pi = 0;
          for (const auto& p : params) {
            Tensor g = grads.at(*p.t);
            if (grad_sum.size() <= pi) {
              grad_sum.push_back(std::move(g));
            } else {
              for (size_t j = 0; j < g.v.size(); ++j) grad_sum[pi].v[j] += g.v[j];
            }
            ++pi;
          }
          ++members;
        } catch (const NonFiniteError& err) {
          if (!ckpt_dir.empty()) {
            std::filesystem::create_directories(ckpt_dir);
            save_checkpoint(ckpt_dir + "/abort.ckpt", ckpt_fn());
          }
          throw TrainError("non-finite loss in epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches) + ": " + err.what());
        }
      }
      for (auto& g : grad_sum) {
        for (double& x : g.v) x /= static_cast<double>(members);
      }
      adam.step(params, grad_sum);
      epoch_loss += batch_loss / static_cast<double>(members);
      epoch_grad_norm += grad_l2(grad_sum);
      ++batches;
      cursor = batch_end;
    }

    history.loss.push_back(epoch_loss / static_cast<double>(std::max<size_t>(1, batches)));
    history.grad_norm.push_back(epoch_grad_norm / static_cast<double>(std::max<size_t>(1, batches)));
    history.val_rmse.push_back(val_fn(split.val, static_cast<std::uint64_t>(epoch)));
    history.seconds.push_back(now_seconds() - t_start);
    if (!ckpt_dir.empty()) {
      std::filesystem::create_directories(ckpt_dir);
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt_epoch_%03d.bin", epoch + 1);
      save_checkpoint(ckpt_dir + name, ckpt_fn());
    }
  }
  return history;
}

TrainHistory Trainer::run(const std::vector<Episode>& episodes, const std::string& ckpt_dir) {
  auto window_loss = [&](const WindowRef& w, RngStream& rng) {
    auto inputs = window_inputs(w, model_.cfg.modality_obs_dims);
    auto targets = window_targets(w);
    SampleContext ctx;
    ctx.rng = &rng;
    SequenceRun run = filter_sequence(model_, inputs, ctx);
    std::vector<Tensor> posts, priors;
    for (auto& s : run.steps) {
      posts.push_back(s.y_post);
      priors.push_back(s.y_prior.size() > 0 ? s.y_prior : Tensor::zeros({model_.cfg.output_dim}));
    }
    auto mask = prior_valid_mask(run.steps.size());
    return sequence_loss(targets, posts, priors, &mask);
  };
  auto val_fn = [&](const std::vector<const Episode*>& val, std::uint64_t epoch) {
    return validation_rmse(model_, val, cfg_.seed ^ (0x5eedULL + epoch));
  };
  auto ckpt_fn = [&]() { return checkpoint(); };
  return train_loop(model_, cfg_, episodes, adam_, window_loss, val_fn, ckpt_fn, ckpt_dir);
}

BaselineTrainer::BaselineTrainer(LstmBaselineModel& model, TrainConfig cfg)
    : model_(model), cfg_(cfg) {
  cfg_.validate();
  AdamConfig ac;
  ac.lr = cfg_.lr;
  adam_ = Adam(model_.params(), ac);
}

void BaselineTrainer::resume(const Checkpoint& ckpt) {
  restore_params(model_.params(), ckpt);
  adam_.load_state(ckpt.tensors, static_cast<std::int64_t>(ckpt.train_step));
}

std::uint64_t BaselineTrainer::step_count() const {
  return static_cast<std::uint64_t>(adam_.step_count());
}

Checkpoint BaselineTrainer::checkpoint() {
  Checkpoint ck = baseline_checkpoint(model_, step_count());
  adam_.save_state(ck.tensors);
  return ck;
}

TrainHistory BaselineTrainer::run(const std::vector<Episode>& episodes,
                                  const std::string& ckpt_dir) {
  auto window_loss = [&](const WindowRef& w, RngStream&) {
    auto inputs = window_inputs(w, model_.cfg.modality_obs_dims);
    auto targets = window_targets(w);
    auto outputs = baseline_rollout(model_, inputs, 0);
    std::vector<bool> no_prior(outputs.size(), false);
    return sequence_loss(targets, outputs, outputs, &no_prior);
  };
  auto val_fn = [&](const std::vector<const Episode*>& val, std::uint64_t) {
    return validation_rmse_baseline(model_, val);
  };
  auto ckpt_fn = [&]() { return checkpoint(); };
  return train_loop(model_, cfg_, episodes, adam_, window_loss, val_fn, ckpt_fn, ckpt_dir);
}

GradCheckReport model_grad_check(const NeuralKalmanModel& model, const std::vector<StepInput>& steps,
                                 const std::vector<Tensor>& targets, double eps, double tol,
                                 std::uint64_t noise_seed) {
  // record base noise once so Dirichlet draws replay identically under
  // perturbed parameters
  std::vector<std::vector<double>> base_noise;
  NeuralKalmanModel probe = model;
  if (model.cfg.kind == TransitionKind::kDirichlet) {
    RngStream rng(noise_seed);
    SampleContext ctx;
    ctx.rng = &rng;
    ctx.record = &base_noise;
    (void)filter_sequence(probe, steps, ctx);
  }

  std::vector<std::pair<std::string, Tensor>> named;
  {
    NeuralKalmanModel copy = model;
    for (const auto& p : copy.params()) named.emplace_back(p.name, p.t->detached());
  }

  auto fn = [&](const std::vector<Tensor>& p) {
    NeuralKalmanModel m = model;
    auto params = m.params();
    for (size_t i = 0; i < params.size(); ++i) *params[i].t = p[i];
    SampleContext ctx;
    ctx.frozen = model.cfg.kind == TransitionKind::kDirichlet ? &base_noise : nullptr;
    SequenceRun run = filter_sequence(m, steps, ctx);
    std::vector<Tensor> posts, priors;
    for (auto& s : run.steps) {
      posts.push_back(s.y_post);
      priors.push_back(s.y_prior.size() > 0 ? s.y_prior : Tensor::zeros({m.cfg.output_dim}));
    }
    auto mask = prior_valid_mask(run.steps.size());
    return sequence_loss(targets, posts, priors, &mask);
  };
  return grad_check(fn, named, eps, tol);
}

}  // namespace dynakf
