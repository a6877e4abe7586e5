#include "dynakf/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"

namespace dynakf {

namespace {

constexpr double kRad2Deg = 57.295779513082320877;

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

Pose6 tensor_pose(const Tensor& t) {
  Pose6 p{0, 0, 0, 0, 0, 0};
  for (int i = 0; i < std::min(6, t.size()); ++i) p[static_cast<size_t>(i)] = t.v[static_cast<size_t>(i)];
  return p;
}

std::vector<double> ranks_with_ties(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return 0.0;
  const auto rx = ranks_with_ties(x);
  const auto ry = ranks_with_ties(y);
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

Trajectory integrate_poses(const std::vector<Pose6>& relatives) {
  Trajectory traj;
  Transform g = Transform::identity();
  traj.poses.push_back(g.to_pose());
  for (const auto& rel : relatives) {
    for (double v : rel) {
      if (!std::isfinite(v)) throw EvalError("integrate_poses: non-finite relative pose");
    }
    g = compose(g, Transform::from_pose(rel));
    traj.poses.push_back(g.to_pose());
  }
  return traj;
}

std::vector<Pose6> differentiate_trajectory(const Trajectory& traj) {
  std::vector<Pose6> rels;
  for (int i = 1; i < traj.length(); ++i) {
    Transform prev = Transform::from_pose(traj.poses[static_cast<size_t>(i - 1)]);
    Transform cur = Transform::from_pose(traj.poses[static_cast<size_t>(i)]);
    rels.push_back(compose(prev.inverse(), cur).to_pose());
  }
  return rels;
}

DriftMetrics drift_metrics(const Trajectory& gt, const Trajectory& est,
                           const std::vector<double>& segment_lengths) {
  if (gt.length() != est.length()) {
    throw EvalError("drift_metrics: trajectory lengths differ (" + std::to_string(gt.length()) +
                    " vs " + std::to_string(est.length()) + ")");
  }
  if (gt.length() < 2) throw EvalError("drift_metrics: trajectory too short");

  const int n = gt.length();
  std::vector<double> dist(static_cast<size_t>(n), 0.0);
  for (int i = 1; i < n; ++i) {
    const auto& a = gt.poses[static_cast<size_t>(i - 1)];
    const auto& b = gt.poses[static_cast<size_t>(i)];
    const double dx = b[0] - a[0], dy = b[1] - a[1], dz = b[2] - a[2];
    dist[static_cast<size_t>(i)] = dist[static_cast<size_t>(i - 1)] + std::sqrt(dx * dx + dy * dy + dz * dz);
  }

  std::vector<Transform> gt_tf, est_tf;
  gt_tf.reserve(static_cast<size_t>(n));
  est_tf.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    gt_tf.push_back(Transform::from_pose(gt.poses[static_cast<size_t>(i)]));
    est_tf.push_back(Transform::from_pose(est.poses[static_cast<size_t>(i)]));
  }

  DriftMetrics out;
  double t_acc = 0.0, r_acc = 0.0;
  int lengths_used = 0;
  for (double length : segment_lengths) {
    double t_sq = 0.0, r_sq = 0.0;
    int count = 0;
    int j = 0;
    for (int i = 0; i < n; ++i) {
      if (j < i) j = i;
      while (j < n && dist[static_cast<size_t>(j)] - dist[static_cast<size_t>(i)] < length) ++j;
      if (j >= n) break;
      const Transform rel_gt = compose(gt_tf[static_cast<size_t>(i)].inverse(), gt_tf[static_cast<size_t>(j)]);
      const Transform rel_est = compose(est_tf[static_cast<size_t>(i)].inverse(), est_tf[static_cast<size_t>(j)]);
      const double ex = rel_gt.t[0] - rel_est.t[0];
      const double ey = rel_gt.t[1] - rel_est.t[1];
      const double ez = rel_gt.t[2] - rel_est.t[2];
      const double t_err = std::sqrt(ex * ex + ey * ey + ez * ez) / length * 100.0;
      const Rot3 r_err_mat = rot_mul(rot_transpose(rel_gt.r), rel_est.r);
      const double r_err = rot_angle(r_err_mat) * kRad2Deg * 100.0 / length;
      t_sq += t_err * t_err;
      r_sq += r_err * r_err;
      ++count;
    }
    if (count == 0) continue;
    LengthDrift ld;
    ld.length = length;
    ld.t_rmse_pct = std::sqrt(t_sq / count);
    ld.r_rmse_deg_per_100 = std::sqrt(r_sq / count);
    ld.segments = count;
    out.breakdown.push_back(ld);
    t_acc += ld.t_rmse_pct;
    r_acc += ld.r_rmse_deg_per_100;
    ++lengths_used;
  }
  if (lengths_used == 0) {
    out.empty = true;
    return out;
  }
  out.t_rel = t_acc / lengths_used;
  out.r_rel = r_acc / lengths_used;
  return out;
}

std::string DriftMetrics::to_csv() const {
  std::string s = "length,t_rmse_pct,r_rmse_deg_per_100m,segments\n";
  for (const auto& ld : breakdown) {
    s += fmt17(ld.length) + "," + fmt17(ld.t_rmse_pct) + "," + fmt17(ld.r_rmse_deg_per_100) +
         "," + std::to_string(ld.segments) + "\n";
  }
  s += "overall," + fmt17(t_rel) + "," + fmt17(r_rel) + ",\n";
  return s;
}

std::string DriftMetrics::to_json() const {
  nlohmann::json j;
  j["t_rel_pct"] = t_rel;
  j["r_rel_deg_per_100m"] = r_rel;
  j["empty"] = empty;
  auto arr = nlohmann::json::array();
  for (const auto& ld : breakdown) {
    arr.push_back({{"length", ld.length},
                   {"t_rmse_pct", ld.t_rmse_pct},
                   {"r_rmse_deg_per_100m", ld.r_rmse_deg_per_100},
                   {"segments", ld.segments}});
  }
  j["breakdown"] = arr;
  return j.dump(2);
}

namespace {

void fold_prediction(PredictionResult& result, int episode_index,
                     const std::vector<Pose6>& predicted, const Episode& ep, int init_len,
                     const std::vector<int>& horizons) {
  for (int h : horizons) {
    double sq = 0.0;
    int count = 0;
    for (int k = 0; k < h; ++k) {
      const int t = init_len + k;
      if (t >= ep.length() || k >= static_cast<int>(predicted.size())) break;
      const Pose6& pred = predicted[static_cast<size_t>(k)];
      const Pose6& act = ep.targets[static_cast<size_t>(t)];
      for (int c = 0; c < 3; ++c) {
        const double d = pred[static_cast<size_t>(c)] - act[static_cast<size_t>(c)];
        sq += d * d;
      }
      ++count;
    }
    const double rmse = std::sqrt(sq / std::max(1, count));
    result.per_episode[h].push_back(rmse);
    EpisodeTrace trace;
    trace.episode = episode_index;
    trace.rmse = rmse;
    trace.predicted.assign(predicted.begin(),
                           predicted.begin() + std::min<size_t>(predicted.size(), static_cast<size_t>(h)));
    for (int k = 0; k < h && init_len + k < ep.length(); ++k) {
      trace.actual.push_back(ep.targets[static_cast<size_t>(init_len + k)]);
    }
    auto best_it = result.best_by_horizon.find(h);
    if (best_it == result.best_by_horizon.end() || rmse < best_it->second.rmse) {
      result.best_by_horizon[h] = trace;
    }
    auto worst_it = result.worst_by_horizon.find(h);
    if (worst_it == result.worst_by_horizon.end() || rmse > worst_it->second.rmse) {
      result.worst_by_horizon[h] = trace;
    }
  }
}

void finalize_prediction(PredictionResult& result) {
  for (auto& [h, errs] : result.per_episode) {
    double sq = 0.0;
    for (double e : errs) sq += e * e;
    result.rmse_by_horizon[h] = std::sqrt(sq / std::max<size_t>(1, errs.size()));
  }
}

}  // namespace

PredictionResult prediction_protocol(const NeuralKalmanModel& model,
                                     const std::vector<Episode>& episodes, int init_len,
                                     const std::vector<int>& horizons, std::uint64_t seed) {
  const int max_h = *std::max_element(horizons.begin(), horizons.end());
  PredictionResult result;
  RngStream root(seed);
  for (size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    if (ep.length() < init_len + max_h) {
      throw EvalError("prediction_protocol: episode " + std::to_string(e) + " shorter than init+" +
                      std::to_string(max_h));
    }
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    std::vector<StepInput> init_steps(inputs.begin(), inputs.begin() + init_len);
    // keyed by the episode's own seed so results are order independent
    RngStream rng = root.split(ep.seed);
    SampleContext ctx;
    ctx.rng = &rng;
    SequenceRun run = filter_sequence(model, init_steps, ctx);
    std::vector<Tensor> controls;
    for (int k = 0; k < max_h; ++k) {
      const int t = init_len + k;
      if (!ep.controls.empty() && t < ep.length()) {
        controls.push_back(Tensor::vec({ep.controls[static_cast<size_t>(t)]}));
      }
    }
    OpenLoopRun ol = open_loop(model, run.final_belief, run.final_lstm, max_h, ctx,
                               controls.empty() ? nullptr : &controls);
    std::vector<Pose6> predicted;
    for (const auto& y : ol.y_prior) predicted.push_back(tensor_pose(y));
    fold_prediction(result, static_cast<int>(e), predicted, ep, init_len, horizons);
  }
  finalize_prediction(result);
  return result;
}

PredictionResult prediction_protocol_baseline(const LstmBaselineModel& model,
                                              const std::vector<Episode>& episodes,
                                              int init_len, const std::vector<int>& horizons) {
  const int max_h = *std::max_element(horizons.begin(), horizons.end());
  PredictionResult result;
  for (size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    if (ep.length() < init_len + max_h) {
      throw EvalError("prediction_protocol: episode " + std::to_string(e) + " shorter than init+" +
                      std::to_string(max_h));
    }
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    std::vector<StepInput> init_steps(inputs.begin(), inputs.begin() + init_len);
    auto outputs = baseline_rollout(model, init_steps, max_h);
    std::vector<Pose6> predicted;
    for (size_t k = static_cast<size_t>(init_len); k < outputs.size(); ++k) {
      predicted.push_back(tensor_pose(outputs[k]));
    }
    fold_prediction(result, static_cast<int>(e), predicted, ep, init_len, horizons);
  }
  finalize_prediction(result);
  return result;
}

GainProbeReport gain_probe(const NeuralKalmanModel& model, const SystemSpec& spec,
                           const CorruptionSpec& schedule, int episodes, int t_len,
                           std::uint64_t seed) {
  schedule.validate(t_len);
  std::vector<double> levels;
  for (const auto& s : schedule.stages) {
    if (levels.empty() || levels.back() != s.level) levels.push_back(s.level);
  }
  // level -> {k_sum, r_sum, q_sum, innov_sum, k_count, rq_count, q_count}
  std::map<double, std::array<double, 8>> acc;
  for (double l : levels) acc[l] = {0, 0, 0, 0, 0, 0, 0, 0};

  RngStream root(seed);
  for (int e = 0; e < episodes; ++e) {
    RngStream gen_rng = root.split(2 * static_cast<std::uint64_t>(e));
    RngStream run_rng = root.split(2 * static_cast<std::uint64_t>(e) + 1);
    Episode clean = generate(spec, t_len, gen_rng);
    Episode ep = corrupt(clean, schedule, gen_rng);
    auto inputs = episode_inputs(ep, model.cfg.modality_obs_dims);
    SampleContext ctx;
    ctx.rng = &run_rng;
    SequenceRun run = filter_sequence(model, inputs, ctx);
    for (int t = 0; t < static_cast<int>(run.steps.size()); ++t) {
      const auto& step = run.steps[static_cast<size_t>(t)];
      const double level = schedule.level_at(t);
      auto& a = acc[level];
      if (step.innov.has_value()) {
        a[0] += step.innov->k_frobenius;
        double mean_abs_r = 0.0;
        for (double x : step.innov->r.v) mean_abs_r += std::fabs(x);
        a[3] += mean_abs_r / step.innov->r.size();
        a[4] += 1.0;
      }
      if (step.r_obs_diag.size() > 0) {
        double mr = 0.0;
        for (double x : step.r_obs_diag.v) mr += x;
        a[1] += mr / step.r_obs_diag.size();
        a[5] += 1.0;
      }
      if (step.q_diag.size() > 0) {
        double mq = 0.0;
        for (double x : step.q_diag.v) mq += x;
        a[2] += mq / step.q_diag.size();
        a[6] += 1.0;
      }
    }
  }

  GainProbeReport rep;
  for (double l : levels) {
    const auto& a = acc[l];
    rep.levels.push_back(l);
    rep.mean_k_frob.push_back(a[0] / std::max(1.0, a[4]));
    rep.mean_r.push_back(a[1] / std::max(1.0, a[5]));
    rep.mean_q.push_back(a[2] / std::max(1.0, a[6]));
    rep.mean_abs_innov.push_back(a[3] / std::max(1.0, a[4]));
  }
  rep.rho_k = spearman(rep.mean_k_frob, rep.levels);
  rep.rho_r = spearman(rep.mean_r, rep.levels);
  rep.rho_q = spearman(rep.mean_q, rep.levels);
  rep.rho_innov = spearman(rep.mean_abs_innov, rep.levels);
  return rep;
}

std::string GainProbeReport::to_csv() const {
  std::string s = "level,mean_K_frob,mean_R,mean_Q,mean_abs_r\n";
  for (size_t i = 0; i < levels.size(); ++i) {
    s += fmt17(levels[i]) + "," + fmt17(mean_k_frob[i]) + "," + fmt17(mean_r[i]) + "," +
         fmt17(mean_q[i]) + "," + fmt17(mean_abs_innov[i]) + "\n";
  }
  return s;
}

std::string GainProbeReport::to_json() const {
  nlohmann::json j;
  j["levels"] = levels;
  j["mean_K_frob"] = mean_k_frob;
  j["mean_R"] = mean_r;
  j["mean_Q"] = mean_q;
  j["mean_abs_r"] = mean_abs_innov;
  j["spearman"] = {{"K_frob", rho_k}, {"R", rho_r}, {"Q", rho_q}, {"abs_r", rho_innov}};
  return j.dump(2);
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::string s = "t,x,y,z,roll,pitch,yaw\n";
  for (int i = 0; i < traj.length(); ++i) {
    const auto& p = traj.poses[static_cast<size_t>(i)];
    s += std::to_string(i);
    for (double v : p) {
      s += ",";
      s += fmt17(v);
    }
    s += "\n";
  }
  return s;
}

}  // namespace dynakf
