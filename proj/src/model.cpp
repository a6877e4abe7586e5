#include "dynakf/model.hpp"

#include <numeric>

#include "json.hpp"

namespace dynakf {

using nlohmann::json;

int ModelConfig::feat_total() const {
  return std::accumulate(modality_feat_dims.begin(), modality_feat_dims.end(), 0);
}

std::string ModelConfig::to_json() const {
  json j;
  j["d"] = d;
  j["modality_obs_dims"] = modality_obs_dims;
  j["modality_feat_dims"] = modality_feat_dims;
  j["encoder_hidden"] = encoder_hidden;
  j["transition_hidden"] = transition_hidden;
  j["kind"] = kind == TransitionKind::kDirichlet ? "dirichlet" : "deterministic";
  j["layout"] = layout == MatrixLayout::kFull ? "full" : "diagonal";
  j["control_dim"] = control_dim;
  j["output_dim"] = output_dim;
  j["a_bias_init"] = a_bias_init;
  j["r_bias_init"] = r_bias_init;
  j["alpha_bias_init"] = alpha_bias_init;
  j["q_bias_init"] = q_bias_init;
  j["transition_forget_bias"] = transition_forget_bias;
  j["alpha_jitter"] = alpha_jitter;
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.modality_obs_dims = j.at("modality_obs_dims").get<std::vector<int>>();
  c.modality_feat_dims = j.at("modality_feat_dims").get<std::vector<int>>();
  c.encoder_hidden = j.at("encoder_hidden").get<int>();
  c.transition_hidden = j.at("transition_hidden").get<int>();
  c.kind = j.at("kind").get<std::string>() == "dirichlet" ? TransitionKind::kDirichlet
                                                          : TransitionKind::kDeterministic;
  c.layout = j.at("layout").get<std::string>() == "full" ? MatrixLayout::kFull
                                                         : MatrixLayout::kDiagonal;
  c.control_dim = j.at("control_dim").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  ModelConfig defaults;
  c.a_bias_init = j.value("a_bias_init", defaults.a_bias_init);
  c.r_bias_init = j.value("r_bias_init", defaults.r_bias_init);
  c.alpha_bias_init = j.value("alpha_bias_init", defaults.alpha_bias_init);
  c.q_bias_init = j.value("q_bias_init", defaults.q_bias_init);
  c.transition_forget_bias = j.value("transition_forget_bias", defaults.transition_forget_bias);
  c.alpha_jitter = j.at("alpha_jitter").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

bool StepInput::any_present() const {
  for (bool p : present) {
    if (p) return true;
  }
  return false;
}

ParamList NeuralKalmanModel::params() {
  ParamList out;
  for (size_t i = 0; i < encoders.size(); ++i) {
    encoders[i].collect(out, "encoder" + std::to_string(i));
  }
  transition.collect(out, "transition");
  out.push_back({"predictor.trans.w", &pred_trans.w});
  out.push_back({"predictor.trans.b", &pred_trans.b});
  out.push_back({"predictor.rot.w", &pred_rot.w});
  out.push_back({"predictor.rot.b", &pred_rot.b});
  return out;
}

void NeuralKalmanModel::bind(Tape& tape) {
  auto list = params();
  bind_params(tape, list);
}

Tensor NeuralKalmanModel::predict_output(const Tensor& z) const {
  return concat(pred_trans.forward(z), pred_rot.forward(z));
}

ObservationPacket NeuralKalmanModel::encode_step(const StepInput& in, RngStream* rng) const {
  if (in.obs.size() != encoders.size() || in.present.size() != encoders.size()) {
    throw ModelError("step input declares " + std::to_string(in.obs.size()) +
                     " modalities, model has " + std::to_string(encoders.size()));
  }
  std::vector<ObservationPacket> packets;
  for (size_t i = 0; i < encoders.size(); ++i) {
    if (in.present[i]) {
      packets.push_back(encoders[i].encode(in.obs[i], rng));
    } else {
      ObservationPacket absent;
      absent.block_dims = {cfg.modality_feat_dims[i]};
      absent.present = {false};
      packets.push_back(std::move(absent));
    }
  }
  return fuse(packets);
}

EmissionMatrix NeuralKalmanModel::emission_for(const std::vector<bool>& present) const {
  const auto& feats = cfg.modality_feat_dims;
  int n_present = 0;
  int only = -1;
  for (size_t i = 0; i < present.size(); ++i) {
    if (present[i]) {
      ++n_present;
      only = static_cast<int>(i);
    }
  }
  if (n_present == 0) throw ModelError("emission_for: no modality present");
  if (n_present == static_cast<int>(present.size())) {
    return emission_leading(cfg.feat_total(), cfg.d);
  }
  if (n_present == 1) {
    const auto offs = cumulative_offsets(feats);
    EmissionMatrix h;
    h.mode = offs[static_cast<size_t>(only)] == 0 ? EmissionMode::kLeadingM
                                                  : EmissionMode::kBlockSelect;
    h.m = feats[static_cast<size_t>(only)];
    h.d = cfg.d;
    h.offset = offs[static_cast<size_t>(only)];
    return h;
  }
  throw ModelError("emission_for: partial multi-block masks are not supported");
}

size_t NeuralKalmanModel::parameter_count() {
  size_t n = 0;
  for (const auto& p : params()) n += p.t->v.size();
  return n;
}

NeuralKalmanModel make_model(const ModelConfig& cfg) {
  if (cfg.modality_obs_dims.size() != cfg.modality_feat_dims.size() ||
      cfg.modality_obs_dims.empty()) {
    throw ModelError("model config: modality obs/feat dim lists must match and be non-empty");
  }
  if (cfg.feat_total() > cfg.d) {
    throw ModelError("model config: total feature dim " + std::to_string(cfg.feat_total()) +
                     " exceeds latent dim " + std::to_string(cfg.d));
  }
  NeuralKalmanModel m;
  m.cfg = cfg;
  RngStream rng(cfg.init_seed);
  for (size_t i = 0; i < cfg.modality_obs_dims.size(); ++i) {
    RngStream er = rng.split(100 + i);
    m.encoders.push_back(make_encoder(cfg.modality_obs_dims[i], cfg.encoder_hidden,
                                      cfg.modality_feat_dims[i], er, cfg.a_bias_init,
                                      cfg.r_bias_init));
  }
  RngStream tr = rng.split(200);
  m.transition = make_transition(cfg.d, cfg.transition_hidden, cfg.kind, cfg.layout, tr,
                                 cfg.control_dim);
  m.transition.alpha_jitter = cfg.alpha_jitter;
  if (cfg.kind == TransitionKind::kDirichlet) {
    for (double& b : m.transition.a_head.b.v) b = cfg.alpha_bias_init;
  }
  for (double& b : m.transition.q_head.b.v) b = cfg.q_bias_init;
  for (double& b : m.transition.trunk.bf.v) b = cfg.transition_forget_bias;
  RngStream pr = rng.split(300);
  m.pred_trans = make_dense(cfg.d, cfg.output_dim / 2, Activation::kNone, pr);
  m.pred_rot = make_dense(cfg.d, cfg.output_dim - cfg.output_dim / 2, Activation::kNone, pr);
  return m;
}

Checkpoint model_checkpoint(NeuralKalmanModel& m, std::uint64_t train_step) {
  return snapshot_params(m.params(), m.cfg.to_json(), train_step);
}

NeuralKalmanModel model_from_checkpoint(const Checkpoint& ckpt) {
  NeuralKalmanModel m = make_model(ModelConfig::from_json(ckpt.config_json));
  restore_params(m.params(), ckpt);
  return m;
}

ParamList LstmBaselineModel::params() {
  ParamList out;
  for (size_t i = 0; i < encoders.size(); ++i) {
    encoders[i].collect(out, "encoder" + std::to_string(i));
  }
  l1.collect(out, "lstm1");
  l2.collect(out, "lstm2");
  out.push_back({"lstm1.h0", &h0_1});
  out.push_back({"lstm1.c0", &c0_1});
  out.push_back({"lstm2.h0", &h0_2});
  out.push_back({"lstm2.c0", &c0_2});
  out.push_back({"predictor.trans.w", &pred_trans.w});
  out.push_back({"predictor.trans.b", &pred_trans.b});
  out.push_back({"predictor.rot.w", &pred_rot.w});
  out.push_back({"predictor.rot.b", &pred_rot.b});
  return out;
}

void LstmBaselineModel::bind(Tape& tape) {
  auto list = params();
  bind_params(tape, list);
}

Tensor LstmBaselineModel::predict_output(const Tensor& h) const {
  return concat(pred_trans.forward(h), pred_rot.forward(h));
}

size_t LstmBaselineModel::parameter_count() {
  size_t n = 0;
  for (const auto& p : params()) n += p.t->v.size();
  return n;
}

LstmBaselineModel make_baseline(const ModelConfig& cfg) {
  LstmBaselineModel m;
  m.cfg = cfg;
  RngStream rng(cfg.init_seed);
  for (size_t i = 0; i < cfg.modality_obs_dims.size(); ++i) {
    RngStream er = rng.split(100 + i);
    m.encoders.push_back(make_encoder(cfg.modality_obs_dims[i], cfg.encoder_hidden,
                                      cfg.modality_feat_dims[i], er, cfg.a_bias_init,
                                      cfg.r_bias_init));
  }
  RngStream lr = rng.split(200);
  m.l1 = make_lstm(cfg.feat_total(), cfg.d, lr);
  m.l2 = make_lstm(cfg.d, cfg.d, lr);
  m.h0_1 = Tensor::zeros({cfg.d});
  m.c0_1 = Tensor::zeros({cfg.d});
  m.h0_2 = Tensor::zeros({cfg.d});
  m.c0_2 = Tensor::zeros({cfg.d});
  RngStream pr = rng.split(300);
  m.pred_trans = make_dense(cfg.d, cfg.output_dim / 2, Activation::kNone, pr);
  m.pred_rot = make_dense(cfg.d, cfg.output_dim - cfg.output_dim / 2, Activation::kNone, pr);
  return m;
}

Checkpoint baseline_checkpoint(LstmBaselineModel& m, std::uint64_t train_step) {
  return snapshot_params(m.params(), m.cfg.to_json(), train_step);
}

LstmBaselineModel baseline_from_checkpoint(const Checkpoint& ckpt) {
  LstmBaselineModel m = make_baseline(ModelConfig::from_json(ckpt.config_json));
  restore_params(m.params(), ckpt);
  return m;
}

std::vector<Tensor> baseline_rollout(const LstmBaselineModel& m,
                                     const std::vector<StepInput>& steps, int horizon) {
  std::vector<Tensor> outputs;
  LstmState s1{m.h0_1, m.c0_1};
  LstmState s2{m.h0_2, m.c0_2};
  auto advance = [&](const Tensor& a) {
    s1 = m.l1.step(a, s1);
    s2 = m.l2.step(s1.h, s2);
    outputs.push_back(m.predict_output(s2.h));
  };
  for (const auto& in : steps) {
    std::vector<ObservationPacket> packets;
    for (size_t i = 0; i < m.encoders.size(); ++i) {
      if (in.present[i]) {
        packets.push_back(m.encoders[i].encode(in.obs[i]));
      } else {
        Tensor zeros = Tensor::zeros({m.cfg.modality_obs_dims[i]});
        packets.push_back(m.encoders[i].encode(zeros));
      }
    }
    advance(fuse(packets).a);
  }
  for (int k = 0; k < horizon; ++k) {
    std::vector<ObservationPacket> packets;
    for (size_t i = 0; i < m.encoders.size(); ++i) {
      Tensor zeros = Tensor::zeros({m.cfg.modality_obs_dims[i]});
      packets.push_back(m.encoders[i].encode(zeros));
    }
    advance(fuse(packets).a);
  }
  return outputs;
}

}  // namespace dynakf
