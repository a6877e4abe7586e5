#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dynakf/nn.hpp"
#include "dynakf/random.hpp"
#include "dynakf/tensor.hpp"

namespace dynakf {

struct TransitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TransitionKind { kDeterministic, kDirichlet };
enum class MatrixLayout { kFull, kDiagonal };

/// How stochastic transitions draw their randomness: a live stream, a live
/// stream that records base noise, or a frozen replay of recorded noise.
struct SampleContext {
  RngStream* rng = nullptr;
  std::vector<std::vector<double>>* record = nullptr;
  const std::vector<std::vector<double>>* frozen = nullptr;
  size_t cursor = 0;
};

struct TransitionPacket {
  Tensor a;       // (d,d) full or (d) diagonal
  Tensor q_diag;  // (d) strictly positive
  TransitionKind provenance = TransitionKind::kDeterministic;
  Tensor alpha;   // concentration snapshot (empty for deterministic)
  LstmState state_after;
};

/// LSTM trunk with linear A head and positive Q head. In Dirichlet mode the
/// A head output becomes the concentration of the sampled transition.
struct TransitionModel {
  LstmCell trunk;
  Tensor h0;          // learned initial trunk state
  Tensor c0;
  DenseLayer a_head;  // d*d (full) or d (diagonal) outputs
  DenseLayer q_head;  // d outputs
  TransitionKind kind = TransitionKind::kDeterministic;
  MatrixLayout layout = MatrixLayout::kDiagonal;
  int d = 0;
  double floor_eps = 1e-4;
  bool alpha_jitter = false;
  double jitter_sigma = 0.01;

  int control_dim() const { return trunk.input_dim() - d; }
  LstmState initial_state() const { return {h0, c0}; }
  TransitionPacket step(const Tensor& z_prev, const LstmState& state, SampleContext& ctx,
                        const Tensor* control = nullptr) const;
  void collect(ParamList& out, const std::string& prefix);
};

TransitionModel make_transition(int d, int hidden, TransitionKind kind, MatrixLayout layout,
                                RngStream& rng, int control_dim = 0);

struct StabilityReport {
  double inf_norm = 0.0;
  double spectral_radius = 0.0;
  std::vector<double> row_sums;
  bool contractive = false;

  std::string to_json() const;
};

/// Maximum absolute row sum norm plus a power-iteration spectral radius
/// estimate (200 iterations). Accepts a full (d,d) matrix or a diagonal
/// vector.
StabilityReport stability_check(const Tensor& a);

double inf_norm(const Tensor& a);

struct RolloutDecay {
  std::vector<double> observed;  // ||z_k||_inf, k = 1..M
  std::vector<double> bound;     // (max_{j<=k} ||A_j||_inf)^k * ||z_0||_inf
};

using TransitionSource = std::function<Tensor(int step)>;

/// Iterates z_{k+1} = A_k z_k with freshly generated transitions and checks
/// the observed norms against the product bound at every step. Throws
/// DivergenceError if the bound is exceeded by more than 1e-12.
RolloutDecay rollout_decay(const TransitionSource& source, const Tensor& z0, int steps);

}  // namespace dynakf
