#include "dynakf/simlab.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dynakf/transition.hpp"

namespace dynakf {

using nlohmann::json;

namespace {

const char* kind_name(SystemKind k) {
  switch (k) {
    case SystemKind::kLinear: return "linear";
    case SystemKind::kPendulum: return "pendulum";
    case SystemKind::kPlanarOdometry: return "planar-odometry";
  }
  return "?";
}

SystemKind kind_from_name(const std::string& s) {
  if (s == "linear") return SystemKind::kLinear;
  if (s == "pendulum") return SystemKind::kPendulum;
  if (s == "planar-odometry") return SystemKind::kPlanarOdometry;
  throw SimError("unknown system kind: " + s);
}

void append_abs_pose(Episode& ep, const Transform& g) { ep.abs_poses.push_back(g.to_pose()); }

Pose6 zero_pose() { return Pose6{0, 0, 0, 0, 0, 0}; }

}  // namespace

std::string SystemSpec::to_json() const {
  json j;
  j["kind"] = kind_name(kind);
  j["latent_dim"] = latent_dim;
  j["obs_dim"] = obs_dim;
  j["modality_obs_dims"] = modality_obs_dims;
  j["projection_seed"] = projection_seed;
  j["obs_noise_sigma"] = obs_noise_sigma;
  if (kind == SystemKind::kLinear) {
    j["lin_a"] = lin_a.v;
    j["lin_q_diag"] = lin_q_diag.v;
    j["lin_declared_stable"] = lin_declared_stable;
  }
  if (kind == SystemKind::kPendulum) {
    j["pend_g_over_l"] = pend_g_over_l;
    j["pend_damping"] = pend_damping;
    j["pend_dt"] = pend_dt;
    j["pend_theta0"] = pend_theta0;
    j["pend_omega0"] = pend_omega0;
  }
  if (kind == SystemKind::kPlanarOdometry) {
    j["dt"] = dt;
    j["ou_speed_mean"] = ou_speed_mean;
    j["ou_speed_theta"] = ou_speed_theta;
    j["ou_speed_sigma"] = ou_speed_sigma;
    j["ou_yaw_mean"] = ou_yaw_mean;
    j["ou_yaw_theta"] = ou_yaw_theta;
    j["ou_yaw_sigma"] = ou_yaw_sigma;
  }
  return j.dump();
}

SystemSpec SystemSpec::from_json(const std::string& s) {
  json j = json::parse(s);
  SystemSpec spec;
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  spec.latent_dim = j.at("latent_dim").get<int>();
  spec.obs_dim = j.at("obs_dim").get<int>();
  spec.modality_obs_dims = j.at("modality_obs_dims").get<std::vector<int>>();
  spec.projection_seed = j.at("projection_seed").get<std::uint64_t>();
  spec.obs_noise_sigma = j.at("obs_noise_sigma").get<double>();
  if (spec.kind == SystemKind::kLinear) {
    auto a = j.at("lin_a").get<std::vector<double>>();
    spec.lin_a = Tensor({spec.latent_dim, spec.latent_dim}, std::move(a));
    spec.lin_q_diag = Tensor::vec(j.at("lin_q_diag").get<std::vector<double>>());
    spec.lin_declared_stable = j.at("lin_declared_stable").get<bool>();
  }
  if (spec.kind == SystemKind::kPendulum) {
    spec.pend_g_over_l = j.at("pend_g_over_l").get<double>();
    spec.pend_damping = j.at("pend_damping").get<double>();
    spec.pend_dt = j.at("pend_dt").get<double>();
    spec.pend_theta0 = j.at("pend_theta0").get<double>();
    spec.pend_omega0 = j.at("pend_omega0").get<double>();
  }
  if (spec.kind == SystemKind::kPlanarOdometry) {
    spec.dt = j.at("dt").get<double>();
    spec.ou_speed_mean = j.at("ou_speed_mean").get<double>();
    spec.ou_speed_theta = j.at("ou_speed_theta").get<double>();
    spec.ou_speed_sigma = j.at("ou_speed_sigma").get<double>();
    spec.ou_yaw_mean = j.at("ou_yaw_mean").get<double>();
    spec.ou_yaw_theta = j.at("ou_yaw_theta").get<double>();
    spec.ou_yaw_sigma = j.at("ou_yaw_sigma").get<double>();
  }
  return spec;
}

void CorruptionSpec::validate(int t_len) const {
  int covered = 0;
  double prev = -1.0;
  for (const auto& s : stages) {
    if (s.begin != covered || s.end <= s.begin) {
      throw SimError("corruption schedule must cover 1..T contiguously without overlap");
    }
    if (s.level < 0.0 || s.level > 1.0) throw SimError("corruption level outside [0,1]");
    if (s.level < prev) throw SimError("corruption levels must be non-decreasing");
    prev = s.level;
    covered = s.end;
  }
  if (covered != t_len) {
    throw SimError("corruption schedule covers " + std::to_string(covered) + " steps, episode has " +
                   std::to_string(t_len));
  }
}

double CorruptionSpec::level_at(int t) const {
  for (const auto& s : stages) {
    if (t >= s.begin && t < s.end) return s.level;
  }
  return 0.0;
}

CorruptionSpec staircase_schedule(int t_len) {
  // stage layout mirrors the 15-frame staircase: 5 clean steps then five
  // 2-step stages of increasing blanking fraction
  const std::vector<double> levels = {0.0, 0.29, 0.49, 0.73, 0.79, 0.98};
  const std::vector<int> frame15 = {0, 5, 7, 9, 11, 13, 15};
  CorruptionSpec spec;
  for (size_t i = 0; i < levels.size(); ++i) {
    int b = static_cast<int>(std::lround(static_cast<double>(frame15[i]) * t_len / 15.0));
    int e = static_cast<int>(std::lround(static_cast<double>(frame15[i + 1]) * t_len / 15.0));
    spec.stages.push_back({b, e, levels[i]});
  }
  spec.validate(t_len);
  return spec;
}

Tensor synthesize_raw_obs(const Tensor& state, const SystemSpec& spec, RngStream& rng) {
  if (spec.obs_dim < state.size()) {
    throw SimError("obs_dim must be >= the state dimension");
  }
  Tensor out = Tensor::zeros({spec.obs_dim});
  int offset = 0;
  const int s_dim = state.size();
  for (size_t b = 0; b < spec.modality_obs_dims.size(); ++b) {
    const int db = spec.modality_obs_dims[b];
    const int hidden = 2 * db;
    RngStream proj = RngStream(spec.projection_seed).split(b + 1);
    const double w1_scale = 1.6 / std::sqrt(static_cast<double>(s_dim));
    const double w2_scale = 1.2 / std::sqrt(static_cast<double>(hidden));
    // h = relu(W1 s), block = tanh(W2 h); weights are a fixed function of
    // the projection seed
    std::vector<double> h(static_cast<size_t>(hidden), 0.0);
    std::vector<double> w1(static_cast<size_t>(hidden) * s_dim);
    for (double& w : w1) w = w1_scale * proj.normal();
    for (int i = 0; i < hidden; ++i) {
      double acc = 0.0;
      for (int j = 0; j < s_dim; ++j) acc += w1[static_cast<size_t>(i) * s_dim + j] * state.v[static_cast<size_t>(j)];
      h[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
    }
    for (int i = 0; i < db; ++i) {
      double acc = 0.0;
      for (int j = 0; j < hidden; ++j) acc += w2_scale * proj.normal() * h[static_cast<size_t>(j)];
      out.v[static_cast<size_t>(offset + i)] = std::tanh(acc);
    }
    offset += db;
  }
  if (spec.obs_noise_sigma > 0.0) {
    for (double& x : out.v) x += spec.obs_noise_sigma * rng.normal();
  }
  return out;
}

Episode gen_linear(const SystemSpec& spec, int t_len, RngStream& rng) {
  if (spec.kind != SystemKind::kLinear) throw SimError("gen_linear: spec kind mismatch");
  if (spec.lin_a.rank() != 2 || spec.lin_a.dims[0] != spec.latent_dim ||
      spec.lin_a.dims[1] != spec.latent_dim) {
    throw SimError("gen_linear: A* must be (d,d)");
  }
  const auto stability = stability_check(spec.lin_a);
  const bool stable = stability.spectral_radius <= 1.0 + 1e-9;
  if (stable != spec.lin_declared_stable) {
    throw SimError("gen_linear: declared stability flag disagrees with spectral radius " +
                   std::to_string(stability.spectral_radius));
  }
  if (!stable && t_len > 500) {
    throw SimError("gen_linear: unstable A* with T > 500 rejected");
  }
  Episode ep;
  Tensor x = Tensor::zeros({spec.latent_dim});
  for (double& v : x.v) v = rng.normal();
  Transform g = Transform::identity();
  append_abs_pose(ep, g);
  for (int t = 0; t < t_len; ++t) {
    ep.states.push_back(x.detached());
    ep.obs.push_back(synthesize_raw_obs(x, spec, rng));
    Pose6 pose = zero_pose();
    for (int i = 0; i < std::min(6, spec.latent_dim); ++i) pose[static_cast<size_t>(i)] = x.v[static_cast<size_t>(i)];
    ep.targets.push_back(pose);
    g = compose(g, Transform::from_pose(pose));
    append_abs_pose(ep, g);
    Tensor next = matmul(spec.lin_a, x);
    if (spec.lin_q_diag.size() == spec.latent_dim) {
      for (int i = 0; i < spec.latent_dim; ++i) {
        const double sd = std::sqrt(spec.lin_q_diag.v[static_cast<size_t>(i)]);
        next.v[static_cast<size_t>(i)] += sd * rng.normal();
      }
    }
    x = next;
  }
  return ep;
}

Episode gen_pendulum(const SystemSpec& spec, int t_len, const ControlPolicy& policy,
                     RngStream& rng) {
  if (spec.kind != SystemKind::kPendulum) throw SimError("gen_pendulum: spec kind mismatch");
  if (spec.pend_dt > 0.1) throw SimError("gen_pendulum: dt > 0.1 rejected");
  if (spec.pend_dt <= 0.0) throw SimError("gen_pendulum: dt must be positive");
  Episode ep;
  double theta = spec.pend_theta0;
  double omega = spec.pend_omega0;
  Transform g = Transform::identity();
  append_abs_pose(ep, g);
  for (int t = 0; t < t_len; ++t) {
    const double u = policy ? policy(t, theta, omega) : 0.0;
    Tensor state = Tensor::vec({theta, omega, u});
    ep.states.push_back(state);
    ep.obs.push_back(synthesize_raw_obs(state, spec, rng));
    ep.controls.push_back(u);
    Pose6 pose = zero_pose();
    pose[0] = theta;
    pose[1] = omega;
    ep.targets.push_back(pose);
    g = compose(g, Transform::from_pose(pose));
    append_abs_pose(ep, g);
    // semi-implicit Euler: advance omega first, then theta with the new omega
    omega += spec.pend_dt * (-spec.pend_g_over_l * std::sin(theta) - spec.pend_damping * omega + u);
    theta += spec.pend_dt * omega;
  }
  return ep;
}

Episode gen_planar_odometry(const SystemSpec& spec, int t_len, RngStream& rng) {
  if (spec.kind != SystemKind::kPlanarOdometry) {
    throw SimError("gen_planar_odometry: spec kind mismatch");
  }
  Episode ep;
  const double sdt = std::sqrt(spec.dt);
  // start from the stationary distribution of each OU process
  double v = spec.ou_speed_mean;
  double w = spec.ou_yaw_mean;
  if (spec.ou_speed_theta > 0.0 && spec.ou_speed_sigma > 0.0) {
    v += spec.ou_speed_sigma / std::sqrt(2.0 * spec.ou_speed_theta) * rng.normal();
  }
  if (spec.ou_yaw_theta > 0.0 && spec.ou_yaw_sigma > 0.0) {
    w += spec.ou_yaw_sigma / std::sqrt(2.0 * spec.ou_yaw_theta) * rng.normal();
  }
  Transform g = Transform::identity();
  append_abs_pose(ep, g);
  for (int t = 0; t < t_len; ++t) {
    Tensor state = Tensor::vec({v, w});
    ep.states.push_back(state);
    ep.obs.push_back(synthesize_raw_obs(state, spec, rng));
    const double dyaw = w * spec.dt;
    Pose6 pose = zero_pose();
    if (std::fabs(w) < 1e-9) {
      pose[0] = v * spec.dt;
    } else {
      pose[0] = v / w * std::sin(dyaw);
      pose[1] = v / w * (1.0 - std::cos(dyaw));
    }
    pose[5] = dyaw;
    ep.targets.push_back(pose);
    g = compose(g, Transform::from_pose(pose));
    append_abs_pose(ep, g);
    v += spec.ou_speed_theta * (spec.ou_speed_mean - v) * spec.dt +
         spec.ou_speed_sigma * sdt * rng.normal();
    w += spec.ou_yaw_theta * (spec.ou_yaw_mean - w) * spec.dt +
         spec.ou_yaw_sigma * sdt * rng.normal();
  }
  return ep;
}

Episode generate(const SystemSpec& spec, int t_len, RngStream& rng) {
  switch (spec.kind) {
    case SystemKind::kLinear: return gen_linear(spec, t_len, rng);
    case SystemKind::kPendulum: return gen_pendulum(spec, t_len, ControlPolicy{}, rng);
    case SystemKind::kPlanarOdometry: return gen_planar_odometry(spec, t_len, rng);
  }
  throw SimError("generate: unknown system kind");
}

Episode corrupt(const Episode& episode, const CorruptionSpec& spec, RngStream& rng) {
  spec.validate(episode.length());
  Episode out = episode;
  out.corruption.assign(static_cast<size_t>(episode.length()), 0.0);
  for (int t = 0; t < episode.length(); ++t) {
    const double level = spec.level_at(t);
    out.corruption[static_cast<size_t>(t)] = level;
    if (level <= 0.0) continue;
    Tensor& obs = out.obs[static_cast<size_t>(t)];
    const int d = obs.size();
    const int nz = static_cast<int>(std::lround(level * d));
    const int offset = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(d));
    for (int i = 0; i < nz; ++i) {
      obs.v[static_cast<size_t>((offset + i) % d)] = 0.0;
    }
  }
  return out;
}

std::string episode_to_jsonl(const Episode& ep, const SystemSpec& spec) {
  std::string out;
  json header;
  header["type"] = "episode_header";
  header["spec"] = json::parse(spec.to_json());
  header["T"] = ep.length();
  header["seed"] = ep.seed;
  header["abs_end"] = ep.abs_poses.empty() ? std::vector<double>(6, 0.0)
                                           : std::vector<double>(ep.abs_poses.back().begin(),
                                                                 ep.abs_poses.back().end());
  out += header.dump();
  out += "\n";
  for (int t = 0; t < ep.length(); ++t) {
    json j;
    j["t"] = t;
    j["state"] = ep.states[static_cast<size_t>(t)].v;
    j["obs"] = ep.obs[static_cast<size_t>(t)].v;
    j["pose"] = std::vector<double>(ep.targets[static_cast<size_t>(t)].begin(),
                                    ep.targets[static_cast<size_t>(t)].end());
    if (!ep.controls.empty()) j["control"] = ep.controls[static_cast<size_t>(t)];
    if (!ep.corruption.empty()) j["corruption"] = ep.corruption[static_cast<size_t>(t)];
    out += j.dump();
    out += "\n";
  }
  return out;
}

Episode episode_from_jsonl(const std::string& text, SystemSpec* spec_out) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw SimError("episode jsonl: empty input");
  json header = json::parse(line);
  if (header.value("type", "") != "episode_header") {
    throw SimError("episode jsonl: missing header line");
  }
  SystemSpec spec = SystemSpec::from_json(header.at("spec").dump());
  if (spec_out != nullptr) *spec_out = spec;
  Episode ep;
  ep.seed = header.at("seed").get<std::uint64_t>();
  Transform g = Transform::identity();
  ep.abs_poses.push_back(g.to_pose());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ep.states.push_back(Tensor::vec(j.at("state").get<std::vector<double>>()));
    ep.obs.push_back(Tensor::vec(j.at("obs").get<std::vector<double>>()));
    auto pv = j.at("pose").get<std::vector<double>>();
    Pose6 pose;
    std::copy(pv.begin(), pv.end(), pose.begin());
    ep.targets.push_back(pose);
    if (j.contains("control")) ep.controls.push_back(j.at("control").get<double>());
    if (j.contains("corruption")) ep.corruption.push_back(j.at("corruption").get<double>());
    g = compose(g, Transform::from_pose(pose));
    ep.abs_poses.push_back(g.to_pose());
  }
  return ep;
}

void save_episode_binary(const std::string& path, const Episode& ep, const SystemSpec& spec) {
  Checkpoint ck;
  json header;
  header["spec"] = json::parse(spec.to_json());
  header["seed"] = ep.seed;
  ck.config_json = header.dump();
  const int t_len = ep.length();
  const int sd = t_len > 0 ? ep.states[0].size() : 0;
  const int od = t_len > 0 ? ep.obs[0].size() : 0;
  Tensor states = Tensor::zeros({t_len, std::max(sd, 1)});
  Tensor obs = Tensor::zeros({t_len, std::max(od, 1)});
  Tensor poses = Tensor::zeros({t_len, 6});
  for (int t = 0; t < t_len; ++t) {
    for (int i = 0; i < sd; ++i) states(t, i) = ep.states[static_cast<size_t>(t)].v[static_cast<size_t>(i)];
    for (int i = 0; i < od; ++i) obs(t, i) = ep.obs[static_cast<size_t>(t)].v[static_cast<size_t>(i)];
    for (int i = 0; i < 6; ++i) poses(t, i) = ep.targets[static_cast<size_t>(t)][static_cast<size_t>(i)];
  }
  ck.tensors.emplace_back("states", std::move(states));
  ck.tensors.emplace_back("obs", std::move(obs));
  ck.tensors.emplace_back("poses", std::move(poses));
  if (!ep.controls.empty()) ck.tensors.emplace_back("controls", Tensor::vec(ep.controls));
  if (!ep.corruption.empty()) ck.tensors.emplace_back("corruption", Tensor::vec(ep.corruption));
  save_checkpoint(path, ck);
}

Episode load_episode_binary(const std::string& path, SystemSpec* spec_out) {
  Checkpoint ck = load_checkpoint(path);
  json header = json::parse(ck.config_json);
  SystemSpec spec = SystemSpec::from_json(header.at("spec").dump());
  if (spec_out != nullptr) *spec_out = spec;
  Episode ep;
  ep.seed = header.at("seed").get<std::uint64_t>();
  const Tensor* states = ck.find("states");
  const Tensor* obs = ck.find("obs");
  const Tensor* poses = ck.find("poses");
  if (states == nullptr || obs == nullptr || poses == nullptr) {
    throw SimError("binary episode: missing tensors in " + path);
  }
  const int t_len = states->dims[0];
  Transform g = Transform::identity();
  ep.abs_poses.push_back(g.to_pose());
  const Tensor* controls = ck.find("controls");
  const Tensor* corruption = ck.find("corruption");
  for (int t = 0; t < t_len; ++t) {
    Tensor s = Tensor::zeros({states->dims[1]});
    for (int i = 0; i < s.size(); ++i) s.v[static_cast<size_t>(i)] = (*states)(t, i);
    ep.states.push_back(std::move(s));
    Tensor o = Tensor::zeros({obs->dims[1]});
    for (int i = 0; i < o.size(); ++i) o.v[static_cast<size_t>(i)] = (*obs)(t, i);
    ep.obs.push_back(std::move(o));
    Pose6 pose;
    for (int i = 0; i < 6; ++i) pose[static_cast<size_t>(i)] = (*poses)(t, i);
    ep.targets.push_back(pose);
    if (controls != nullptr) ep.controls.push_back(controls->v[static_cast<size_t>(t)]);
    if (corruption != nullptr) ep.corruption.push_back(corruption->v[static_cast<size_t>(t)]);
    g = compose(g, Transform::from_pose(pose));
    ep.abs_poses.push_back(g.to_pose());
  }
  return ep;
}

std::vector<StepInput> episode_inputs(const Episode& ep,
                                      const std::vector<int>& modality_dims) {
  std::vector<StepInput> steps;
  steps.reserve(static_cast<size_t>(ep.length()));
  for (int t = 0; t < ep.length(); ++t) {
    StepInput in;
    const Tensor& obs = ep.obs[static_cast<size_t>(t)];
    int offset = 0;
    for (int dim : modality_dims) {
      if (offset + dim > obs.size()) {
        throw SimError("episode obs dim " + std::to_string(obs.size()) +
                       " smaller than modality layout");
      }
      Tensor block = Tensor::zeros({dim});
      std::copy(obs.v.begin() + offset, obs.v.begin() + offset + dim, block.v.begin());
      in.obs.push_back(std::move(block));
      in.present.push_back(true);
      offset += dim;
    }
    if (!ep.controls.empty()) in.control = Tensor::vec({ep.controls[static_cast<size_t>(t)]});
    steps.push_back(std::move(in));
  }
  return steps;
}

Tensor pose_tensor(const Pose6& p) {
  return Tensor::vec(std::vector<double>(p.begin(), p.end()));
}

}  // namespace dynakf
