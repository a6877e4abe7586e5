#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dynakf/model.hpp"

namespace dynakf {

struct FilterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Filter state: latent mean plus diagonal covariance vector, or a full
/// covariance matrix in full mode (used by the oracle-equivalence tests).
struct LatentBelief {
  Tensor z;  // (d)
  Tensor p;  // (d) diagonal or (d,d) full
  int t = 0;

  bool full_cov() const { return p.rank() == 2; }
  int dim() const { return z.size(); }
};

struct InnovationRecord {
  Tensor r;  // (m)
  Tensor s;  // (m) diagonal or (m,m) full
  Tensor k;  // (m) gain on observed coords (diag) or (d,m) full
  double k_frobenius = 0.0;
  int t = 0;
};

LatentBelief predict(const LatentBelief& belief, const TransitionPacket& packet);

std::pair<LatentBelief, InnovationRecord> update(const LatentBelief& prior,
                                                 const ObservationPacket& obs,
                                                 const EmissionMatrix& h);

struct FilterStep {
  LatentBelief prior;
  LatentBelief posterior;
  std::optional<InnovationRecord> innov;
  Tensor y_prior;  // empty on the first step (no predict has happened yet)
  Tensor y_post;
  Tensor alpha;       // concentration snapshot when the transition was sampled
  Tensor q_diag;      // process noise used by the predict into this step
  Tensor r_obs_diag;  // learned observation noise when an update happened
};

struct SequenceRun {
  std::vector<FilterStep> steps;
  LatentBelief final_belief;
  LstmState final_lstm;
};

/// Runs the recursive filter over a window of step inputs. The first step
/// initializes the belief from the lifted first observation (P = I) and
/// applies an update only; later steps predict and, when any modality is
/// present, update. Fully absent steps are predict-only.
SequenceRun filter_sequence(const NeuralKalmanModel& model, const std::vector<StepInput>& steps,
                            SampleContext& ctx);

struct OpenLoopRun {
  std::vector<LatentBelief> priors;
  std::vector<Tensor> y_prior;
  LstmState final_lstm;
};

/// Repeated predict with freshly generated transitions; no updates.
OpenLoopRun open_loop(const NeuralKalmanModel& model, const LatentBelief& start,
                      const LstmState& lstm, int horizon, SampleContext& ctx,
                      const std::vector<Tensor>* controls = nullptr);

/// Mean squared loss over posterior and prior outputs:
/// L = (1/T) sum_t (|y - y_post|^2 + [prior_valid] |y - y_prior|^2).
Tensor sequence_loss(const std::vector<Tensor>& gt, const std::vector<Tensor>& posterior,
                     const std::vector<Tensor>& prior,
                     const std::vector<bool>* prior_valid = nullptr);

/// One JSON record per step: t, z, diagP, r, S, K_frobenius, y_prior,
/// y_posterior.
std::string trace_jsonl(const SequenceRun& run);

}  // namespace dynakf
