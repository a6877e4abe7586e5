#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dynakf/evalkit.hpp"
#include "dynakf/filter.hpp"
#include "dynakf/simlab.hpp"

namespace dynakf {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int window = 5;
  int batch = 32;
  double lr = 1e-4;
  int epochs = 30;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  // worker threads for batch-member forward/backward passes; gradients are
  // reduced in window order, so the result is identical for any count
  int threads = 1;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<double> val_rmse;
  std::vector<double> grad_norm;
  std::vector<double> seconds;

  std::string to_csv() const;
};

/// Unit-stride sliding window over one episode.
struct WindowRef {
  const Episode* episode = nullptr;
  int begin = 0;
  int length = 0;
};

std::vector<WindowRef> make_windows(const Episode& ep, int window, int stride = 1);

std::vector<StepInput> window_inputs(const WindowRef& w, const std::vector<int>& modality_dims);
std::vector<Tensor> window_targets(const WindowRef& w);

/// Deterministic index-based split: every k-th episode validates, the rest
/// train (k from val_fraction).
struct EpisodeSplit {
  std::vector<const Episode*> train;
  std::vector<const Episode*> val;
};
EpisodeSplit split_episodes(const std::vector<Episode>& episodes, double val_fraction);

/// Posterior-pose RMSE over full episodes (all modalities present).
double validation_rmse(const NeuralKalmanModel& model, const std::vector<const Episode*>& episodes,
                       std::uint64_t seed);
double validation_rmse_baseline(const LstmBaselineModel& model,
                                const std::vector<const Episode*>& episodes);

class Trainer {
 public:
  Trainer(NeuralKalmanModel& model, TrainConfig cfg);

  /// Continues Adam moments and the step counter from a checkpoint.
  void resume(const Checkpoint& ckpt);

  /// Windowed training with the joint posterior+prior loss. When ckpt_dir is
  /// non-empty a checkpoint is written after every epoch. A non-finite loss
  /// aborts with the offending batch index after dumping a checkpoint.
  TrainHistory run(const std::vector<Episode>& episodes, const std::string& ckpt_dir = "");

  std::uint64_t step_count() const;
  Checkpoint checkpoint();

 private:
  NeuralKalmanModel& model_;
  TrainConfig cfg_;
  Adam adam_;
};

class BaselineTrainer {
 public:
  BaselineTrainer(LstmBaselineModel& model, TrainConfig cfg);
  void resume(const Checkpoint& ckpt);
  TrainHistory run(const std::vector<Episode>& episodes, const std::string& ckpt_dir = "");
  std::uint64_t step_count() const;
  Checkpoint checkpoint();

 private:
  LstmBaselineModel& model_;
  TrainConfig cfg_;
  Adam adam_;
};

/// Finite-difference check of every parameter group through the full
/// pipeline on one window. Dirichlet models are checked with frozen base
/// noise so the loss is a deterministic function of the parameters.
GradCheckReport model_grad_check(const NeuralKalmanModel& model, const std::vector<StepInput>& steps,
                                 const std::vector<Tensor>& targets, double eps, double tol,
                                 std::uint64_t noise_seed = 17);

}  // namespace dynakf
