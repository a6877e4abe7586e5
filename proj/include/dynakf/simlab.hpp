#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dynakf/model.hpp"
#include "dynakf/random.hpp"
#include "dynakf/se3.hpp"
#include "dynakf/tensor.hpp"

namespace dynakf {

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SystemKind { kLinear, kPendulum, kPlanarOdometry };

struct SystemSpec {
  SystemKind kind = SystemKind::kPlanarOdometry;
  int latent_dim = 2;
  int obs_dim = 64;
  std::vector<int> modality_obs_dims = {64};
  std::uint64_t projection_seed = 7;
  double obs_noise_sigma = 0.01;

  // linear: x' = A* x + N(0, Q*)
  Tensor lin_a;
  Tensor lin_q_diag;
  bool lin_declared_stable = true;

  // pendulum: theta'' = -(g/l) sin(theta) - damping * omega + u
  double pend_g_over_l = 9.81;
  double pend_damping = 0.1;
  double pend_dt = 0.01;
  double pend_theta0 = 0.5;
  double pend_omega0 = 0.0;

  // planar odometry: Ornstein-Uhlenbeck speed and yaw-rate; slow mean
  // reversion keeps per-episode motion persistent, like real driving
  double dt = 0.1;
  double ou_speed_mean = 5.0;
  double ou_speed_theta = 0.12;
  double ou_speed_sigma = 0.5;
  double ou_yaw_mean = 0.0;
  double ou_yaw_theta = 0.3;
  double ou_yaw_sigma = 0.3;

  std::string to_json() const;
  static SystemSpec from_json(const std::string& s);
};

/// One simulated trajectory. Poses are per-step relative transforms
/// [translation, XYZ Euler]; abs_poses is the left-composed integral of
/// those transforms (origin-anchored).
struct Episode {
  std::vector<Tensor> states;
  std::vector<Tensor> obs;
  std::vector<Pose6> targets;
  std::vector<double> controls;    // empty when the system has no control
  std::vector<double> corruption;  // empty until corrupt() runs
  std::vector<Pose6> abs_poses;    // length T+1, starts at identity
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(states.size()); }
};

struct CorruptionStage {
  int begin = 0;  // step range [begin, end)
  int end = 0;
  double level = 0.0;
};

struct CorruptionSpec {
  std::vector<CorruptionStage> stages;

  void validate(int t_len) const;
  double level_at(int t) const;
};

/// The 6-stage staircase: clean for the first third, then five increasing
/// blanking fractions.
CorruptionSpec staircase_schedule(int t_len = 15);

using ControlPolicy = std::function<double(int step, double theta, double omega)>;

Episode gen_linear(const SystemSpec& spec, int t_len, RngStream& rng);
Episode gen_pendulum(const SystemSpec& spec, int t_len, const ControlPolicy& policy,
                     RngStream& rng);
Episode gen_planar_odometry(const SystemSpec& spec, int t_len, RngStream& rng);
Episode generate(const SystemSpec& spec, int t_len, RngStream& rng);

/// Fixed random two-layer tanh lift of the state into observation space,
/// plus additive Gaussian noise.
Tensor synthesize_raw_obs(const Tensor& state, const SystemSpec& spec, RngStream& rng);

/// Zeroes a contiguous (mod wrap) fraction of raw observation coordinates
/// per step according to the schedule. States, targets, and length are
/// untouched.
Episode corrupt(const Episode& episode, const CorruptionSpec& spec, RngStream& rng);

// serialization: JSON-lines and a binary variant mirroring the checkpoint
// encoding; both round-trip exactly
std::string episode_to_jsonl(const Episode& ep, const SystemSpec& spec);
Episode episode_from_jsonl(const std::string& text, SystemSpec* spec_out = nullptr);
void save_episode_binary(const std::string& path, const Episode& ep, const SystemSpec& spec);
Episode load_episode_binary(const std::string& path, SystemSpec* spec_out = nullptr);

/// Splits raw observations into the model's modality blocks; all blocks
/// present, controls forwarded.
std::vector<StepInput> episode_inputs(const Episode& ep,
                                      const std::vector<int>& modality_dims);

Tensor pose_tensor(const Pose6& p);

}  // namespace dynakf
