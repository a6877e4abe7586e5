#pragma once

#include <map>
#include <string>
#include <vector>

#include "dynakf/filter.hpp"
#include "dynakf/se3.hpp"
#include "dynakf/simlab.hpp"

namespace dynakf {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Absolute trajectory, origin-anchored (pose 0 is identity).
struct Trajectory {
  std::vector<Pose6> poses;

  int length() const { return static_cast<int>(poses.size()); }
};

/// Left-composes per-step relative transforms from the identity.
Trajectory integrate_poses(const std::vector<Pose6>& relatives);
/// Inverse of integrate_poses.
std::vector<Pose6> differentiate_trajectory(const Trajectory& traj);

struct LengthDrift {
  double length = 0.0;
  double t_rmse_pct = 0.0;
  double r_rmse_deg_per_100 = 0.0;
  int segments = 0;
};

struct DriftMetrics {
  double t_rel = 0.0;  // percent
  double r_rel = 0.0;  // degrees per 100 m
  std::vector<LengthDrift> breakdown;
  bool empty = false;  // no segment length fit inside the trajectory

  std::string to_csv() const;
  std::string to_json() const;
};

/// KITTI-style segment drift. For every start index and each segment length
/// (by arc length along gt), aligns segment starts and accumulates endpoint
/// translation error / L and geodesic rotation error * 100 / L; RMSE per
/// length, then mean over lengths.
DriftMetrics drift_metrics(const Trajectory& gt, const Trajectory& est,
                           const std::vector<double>& segment_lengths);

struct EpisodeTrace {
  int episode = -1;
  double rmse = 0.0;
  std::vector<Pose6> predicted;
  std::vector<Pose6> actual;
};

struct PredictionResult {
  std::map<int, double> rmse_by_horizon;          // translation RMSE
  std::map<int, EpisodeTrace> best_by_horizon;
  std::map<int, EpisodeTrace> worst_by_horizon;
  std::map<int, std::vector<double>> per_episode;  // per-horizon episode errors
};

/// Filter the first init_len steps, then predict open loop for the largest
/// horizon; report translation RMSE per horizon plus best/worst episodes.
PredictionResult prediction_protocol(const NeuralKalmanModel& model,
                                     const std::vector<Episode>& episodes, int init_len,
                                     const std::vector<int>& horizons, std::uint64_t seed);

/// Same protocol for the LSTM baseline (open loop recurses on the encoding
/// of an all-zero observation).
PredictionResult prediction_protocol_baseline(const LstmBaselineModel& model,
                                              const std::vector<Episode>& episodes,
                                              int init_len, const std::vector<int>& horizons);

struct GainProbeReport {
  std::vector<double> levels;
  std::vector<double> mean_k_frob;
  std::vector<double> mean_r;
  std::vector<double> mean_q;
  std::vector<double> mean_abs_innov;
  double rho_k = 0.0;
  double rho_r = 0.0;
  double rho_q = 0.0;
  double rho_innov = 0.0;

  std::string to_csv() const;
  std::string to_json() const;
};

/// Runs the filter over freshly generated episodes corrupted with the given
/// schedule; aggregates per corruption level and reports Spearman rank
/// correlations of each statistic against the level.
GainProbeReport gain_probe(const NeuralKalmanModel& model, const SystemSpec& spec,
                           const CorruptionSpec& schedule, int episodes, int t_len,
                           std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties; 0 when either
/// input has no variance.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

std::string trajectory_to_csv(const Trajectory& traj);

}  // namespace dynakf
