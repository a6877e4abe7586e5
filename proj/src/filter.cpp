#include "dynakf/filter.hpp"

#include <cmath>

#include "json.hpp"

namespace dynakf {

namespace {

double frobenius(const Tensor& t) {
  double s = 0.0;
  for (double x : t.v) s += x * x;
  return std::sqrt(s);
}

Tensor symmetrize(const Tensor& p) {
  return mul_scalar(add(p, transpose(p)), 0.5);
}

Tensor diag_matrix(const Tensor& v) {
  Tensor m = Tensor::zeros({v.size(), v.size()});
  for (int i = 0; i < v.size(); ++i) m(i, i) = v.v[static_cast<size_t>(i)];
  return m;
}

}  // namespace

LatentBelief predict(const LatentBelief& belief, const TransitionPacket& packet) {
  LatentBelief out;
  out.t = belief.t + 1;
  if (belief.full_cov()) {
    if (packet.a.rank() != 2) {
      throw FilterError("full-covariance predict needs a full transition matrix");
    }
    out.z = matmul(packet.a, belief.z);
    Tensor apat = matmul(matmul(packet.a, belief.p), transpose(packet.a));
    out.p = symmetrize(add(apat, diag_matrix(packet.q_diag)));
  } else {
    if (packet.a.rank() != 1) {
      throw FilterError("diagonal predict needs a diagonal transition vector");
    }
    if (packet.a.size() != belief.z.size()) {
      throw FilterError("transition dim " + packet.a.shape_str() + " != belief dim " +
                        belief.z.shape_str());
    }
    out.z = mul(packet.a, belief.z);
    out.p = add(mul(square(packet.a), belief.p), packet.q_diag);
  }
  return out;
}

std::pair<LatentBelief, InnovationRecord> update(const LatentBelief& prior,
                                                 const ObservationPacket& obs,
                                                 const EmissionMatrix& h) {
  if (obs.a.size() != h.m) {
    throw FilterError("observation dim " + obs.a.shape_str() + " != emission rows " +
                      std::to_string(h.m));
  }
  if (prior.dim() != h.d) {
    throw FilterError("belief dim " + prior.z.shape_str() + " != emission cols " +
                      std::to_string(h.d));
  }
  InnovationRecord rec;
  rec.t = prior.t;
  LatentBelief post;
  post.t = prior.t;

  if (prior.full_cov()) {
    Tensor hm = h.realized();
    Tensor hz = matmul(hm, prior.z);
    rec.r = sub(obs.a, hz);
    Tensor pht = matmul(prior.p, transpose(hm));
    rec.s = add(diag_matrix(obs.r_diag), matmul(hm, pht));
    Tensor s_inv = spd_inverse(rec.s);
    rec.k = matmul(pht, s_inv);
    post.z = add(prior.z, matmul(rec.k, rec.r));
    Tensor ikh = sub(Tensor::identity(h.d), matmul(rec.k, hm));
    post.p = symmetrize(matmul(ikh, prior.p));
  } else {
    Tensor zp = h.select(prior.z);
    Tensor pp = h.select(prior.p);
    rec.r = sub(obs.a, zp);
    rec.s = add(obs.r_diag, pp);
    Tensor gain = divide(pp, rec.s);
    rec.k = gain;
    Tensor z_obs = add(zp, mul(gain, rec.r));
    Tensor p_obs = mul(sub(Tensor::scalar(1.0), gain), pp);
    if (h.m == h.d) {
      post.z = z_obs;
      post.p = p_obs;
    } else {
      // coordinates outside the selection keep their prior mean/covariance
      Tensor z_new = z_obs;
      Tensor p_new = p_obs;
      if (h.offset > 0) {
        z_new = concat(slice(prior.z, 0, h.offset), z_new);
        p_new = concat(slice(prior.p, 0, h.offset), p_new);
      }
      const int tail = h.d - h.offset - h.m;
      if (tail > 0) {
        z_new = concat(z_new, slice(prior.z, h.offset + h.m, tail));
        p_new = concat(p_new, slice(prior.p, h.offset + h.m, tail));
      }
      post.z = z_new;
      post.p = p_new;
    }
  }
  rec.k_frobenius = frobenius(rec.k);
  return {post, rec};
}

SequenceRun filter_sequence(const NeuralKalmanModel& model, const std::vector<StepInput>& steps,
                            SampleContext& ctx) {
  if (steps.empty()) throw FilterError("filter_sequence needs at least one step");
  if (!steps.front().any_present()) {
    throw FilterError("filter_sequence: first step must have at least one observation");
  }
  SequenceRun run;
  LstmState lstm = model.transition.initial_state();

  // initial belief: lift the first observation, unit covariance, update only
  ObservationPacket pkt0 = model.encode_step(steps.front());
  EmissionMatrix h0 = model.emission_for(steps.front().present);
  LatentBelief init;
  init.t = 0;
  init.z = h0.lift(pkt0.a);
  init.p = model.cfg.layout == MatrixLayout::kFull
               ? Tensor::identity(model.cfg.d)
               : Tensor::full({model.cfg.d}, 1.0);
  auto [post0, rec0] = update(init, pkt0, h0);

  FilterStep step0;
  step0.prior = init;
  step0.posterior = post0;
  step0.innov = rec0;
  step0.r_obs_diag = pkt0.r_diag.detached();
  step0.y_post = model.predict_output(post0.z);
  run.steps.push_back(std::move(step0));

  LatentBelief belief = run.steps.back().posterior;
  for (size_t t = 1; t < steps.size(); ++t) {
    const Tensor* control = steps[t].control.size() > 0 ? &steps[t].control : nullptr;
    TransitionPacket packet = model.transition.step(belief.z, lstm, ctx, control);
    lstm = packet.state_after;
    LatentBelief prior = predict(belief, packet);

    FilterStep fstep;
    fstep.prior = prior;
    fstep.y_prior = model.predict_output(prior.z);
    fstep.alpha = packet.alpha;
    fstep.q_diag = packet.q_diag.detached();
    if (steps[t].any_present()) {
      ObservationPacket pkt = model.encode_step(steps[t]);
      EmissionMatrix h = model.emission_for(steps[t].present);
      auto [post, rec] = update(prior, pkt, h);
      fstep.posterior = post;
      fstep.innov = rec;
      fstep.r_obs_diag = pkt.r_diag.detached();
    } else {
      fstep.posterior = prior;
    }
    fstep.y_post = model.predict_output(fstep.posterior.z);
    belief = fstep.posterior;
    run.steps.push_back(std::move(fstep));
  }
  run.final_belief = belief;
  run.final_lstm = lstm;
  return run;
}

OpenLoopRun open_loop(const NeuralKalmanModel& model, const LatentBelief& start,
                      const LstmState& lstm, int horizon, SampleContext& ctx,
                      const std::vector<Tensor>* controls) {
  if (horizon < 1) throw FilterError("open_loop horizon must be >= 1");
  OpenLoopRun run;
  LatentBelief belief = start;
  LstmState state = lstm;
  for (int k = 0; k < horizon; ++k) {
    const Tensor* control = nullptr;
    if (controls != nullptr && k < static_cast<int>(controls->size())) {
      control = &(*controls)[static_cast<size_t>(k)];
    }
    TransitionPacket packet = model.transition.step(belief.z, state, ctx, control);
    state = packet.state_after;
    belief = predict(belief, packet);
    run.priors.push_back(belief);
    run.y_prior.push_back(model.predict_output(belief.z));
  }
  run.final_lstm = state;
  return run;
}

Tensor sequence_loss(const std::vector<Tensor>& gt, const std::vector<Tensor>& posterior,
                     const std::vector<Tensor>& prior,
                     const std::vector<bool>* prior_valid) {
  const size_t t_len = gt.size();
  if (t_len == 0 || posterior.size() != t_len || prior.size() != t_len) {
    throw FilterError("sequence_loss: sequence lengths differ (gt " + std::to_string(t_len) +
                      ", posterior " + std::to_string(posterior.size()) + ", prior " +
                      std::to_string(prior.size()) + ")");
  }
  Tensor total = Tensor::scalar(0.0);
  for (size_t t = 0; t < t_len; ++t) {
    total = add(total, sum(square(sub(gt[t], posterior[t]))));
    const bool valid = prior_valid == nullptr || (*prior_valid)[t];
    if (valid && prior[t].size() > 0) {
      total = add(total, sum(square(sub(gt[t], prior[t]))));
    }
  }
  return mul_scalar(total, 1.0 / static_cast<double>(t_len));
}

std::string trace_jsonl(const SequenceRun& run) {
  std::string out;
  int t = 0;
  for (const auto& step : run.steps) {
    nlohmann::json j;
    j["t"] = t++;
    j["z"] = step.posterior.z.v;
    if (step.posterior.full_cov()) {
      std::vector<double> diag;
      for (int i = 0; i < step.posterior.z.size(); ++i) diag.push_back(step.posterior.p(i, i));
      j["diagP"] = diag;
    } else {
      j["diagP"] = step.posterior.p.v;
    }
    if (step.innov.has_value()) {
      j["r"] = step.innov->r.v;
      j["S"] = step.innov->s.v;
      j["K_frobenius"] = step.innov->k_frobenius;
    } else {
      j["r"] = nlohmann::json::array();
      j["S"] = nlohmann::json::array();
      j["K_frobenius"] = nullptr;
    }
    j["y_prior"] = step.y_prior.size() > 0 ? nlohmann::json(step.y_prior.v)
                                           : nlohmann::json(nullptr);
    j["y_posterior"] = step.y_post.v;
    out += j.dump();
    out += "\n";
  }
  return out;
}

}  // namespace dynakf
