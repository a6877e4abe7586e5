#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynakf/emission.hpp"
#include "dynakf/nn.hpp"
#include "dynakf/transition.hpp"

namespace dynakf {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int d = 16;
  std::vector<int> modality_obs_dims = {64};
  std::vector<int> modality_feat_dims = {16};
  int encoder_hidden = 32;
  int transition_hidden = 32;
  TransitionKind kind = TransitionKind::kDirichlet;
  MatrixLayout layout = MatrixLayout::kDiagonal;
  int control_dim = 0;
  int output_dim = 6;
  // head bias priors: features and observation noise start high, so blank
  // input reads as "strong uncertainty". A negative Q bias makes
  // off-distribution latents fall back to the process-noise floor, at the
  // cost of possibly dead Q units in very small trunks; it is opt-in.
  double a_bias_init = 0.5;
  double r_bias_init = 1.0;
  double alpha_bias_init = 0.5;
  double q_bias_init = 0.0;
  double transition_forget_bias = 1.0;
  bool alpha_jitter = false;
  std::uint64_t init_seed = 1;

  int feat_total() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& s);
};

/// One timestep of raw input: a tensor per declared modality plus a
/// present/absent flag, and an optional control signal.
struct StepInput {
  std::vector<Tensor> obs;
  std::vector<bool> present;
  Tensor control;

  bool any_present() const;
};

/// The full learned dynamical model: per-modality encoders, a generated
/// transition, and linear translation/rotation output heads.
struct NeuralKalmanModel {
  ModelConfig cfg;
  std::vector<Encoder> encoders;
  TransitionModel transition;
  DenseLayer pred_trans;
  DenseLayer pred_rot;

  ParamList params();
  void bind(Tape& tape);
  Tensor predict_output(const Tensor& z) const;
  /// Encodes the present modalities and fuses them in declared order.
  ObservationPacket encode_step(const StepInput& in, RngStream* rng = nullptr) const;
  /// Selection matrix for an availability mask: all present -> leading-m
  /// (identity when the features span d); exactly one block -> block select.
  EmissionMatrix emission_for(const std::vector<bool>& present) const;
  size_t parameter_count();
};

NeuralKalmanModel make_model(const ModelConfig& cfg);

Checkpoint model_checkpoint(NeuralKalmanModel& m, std::uint64_t train_step);
NeuralKalmanModel model_from_checkpoint(const Checkpoint& ckpt);

/// Same encoders and predictor, with a 2-layer LSTM (hidden size d) in place
/// of the filter.
struct LstmBaselineModel {
  ModelConfig cfg;
  std::vector<Encoder> encoders;
  LstmCell l1;
  LstmCell l2;
  Tensor h0_1, c0_1;  // learned initial states, matching the filter model
  Tensor h0_2, c0_2;
  DenseLayer pred_trans;
  DenseLayer pred_rot;

  ParamList params();
  void bind(Tape& tape);
  Tensor predict_output(const Tensor& h) const;
  size_t parameter_count();
};

LstmBaselineModel make_baseline(const ModelConfig& cfg);

Checkpoint baseline_checkpoint(LstmBaselineModel& m, std::uint64_t train_step);
LstmBaselineModel baseline_from_checkpoint(const Checkpoint& ckpt);

/// Posterior-style outputs for observed steps, then open-loop recursion on
/// the encoding of an all-zero observation for the remaining horizon.
std::vector<Tensor> baseline_rollout(const LstmBaselineModel& m,
                                     const std::vector<StepInput>& steps, int horizon);

}  // namespace dynakf
