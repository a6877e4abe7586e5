#include "dynakf/transition.hpp"

#include <cmath>
#include <cstdio>

namespace dynakf {

TransitionPacket TransitionModel::step(const Tensor& z_prev, const LstmState& state,
                                       SampleContext& ctx, const Tensor* control) const {
  if (z_prev.size() != d) {
    throw TransitionError("transition input " + z_prev.shape_str() + " != latent dim " +
                          std::to_string(d));
  }
  Tensor input = z_prev;
  if (control_dim() > 0) {
    if (control == nullptr || control->size() != control_dim()) {
      throw TransitionError("transition expects a control input of dim " +
                            std::to_string(control_dim()));
    }
    input = concat(input, *control);
  }
  LstmState next = trunk.step(input, state);

  TransitionPacket pkt;
  pkt.state_after = next;
  pkt.q_diag = add_scalar(relu(q_head.forward(next.h)), floor_eps);
  pkt.provenance = kind;

  Tensor head_out = a_head.forward(next.h);
  if (kind == TransitionKind::kDeterministic) {
    pkt.a = layout == MatrixLayout::kFull ? reshape(head_out, {d, d}) : head_out;
    return pkt;
  }

  Tensor alpha = relu(head_out);
  if (alpha_jitter && ctx.rng != nullptr && ctx.frozen == nullptr) {
    Tensor noise = sample_gaussian(alpha.dims, 0.0, jitter_sigma, *ctx.rng);
    for (double& x : noise.v) x = std::fabs(x);
    alpha = add(alpha, noise);
  }
  alpha = add_scalar(alpha, floor_eps);
  pkt.alpha = alpha.detached();

  Tensor sample;
  if (ctx.frozen != nullptr) {
    if (ctx.cursor >= ctx.frozen->size()) {
      throw TransitionError("frozen sample context exhausted");
    }
    sample = sample_dirichlet_frozen(alpha, (*ctx.frozen)[ctx.cursor++]);
  } else {
    if (ctx.rng == nullptr) {
      throw TransitionError("dirichlet transition needs an RngStream");
    }
    if (ctx.record != nullptr) {
      ctx.record->emplace_back();
      sample = sample_dirichlet(alpha, *ctx.rng, &ctx.record->back());
    } else {
      sample = sample_dirichlet(alpha, *ctx.rng);
    }
  }
  pkt.a = layout == MatrixLayout::kFull ? reshape(sample, {d, d}) : sample;
  return pkt;
}

void TransitionModel::collect(ParamList& out, const std::string& prefix) {
  trunk.collect(out, prefix + ".lstm");
  out.push_back({prefix + ".h0", &h0});
  out.push_back({prefix + ".c0", &c0});
  out.push_back({prefix + ".a_head.w", &a_head.w});
  out.push_back({prefix + ".a_head.b", &a_head.b});
  out.push_back({prefix + ".q_head.w", &q_head.w});
  out.push_back({prefix + ".q_head.b", &q_head.b});
}

TransitionModel make_transition(int d, int hidden, TransitionKind kind, MatrixLayout layout,
                                RngStream& rng, int control_dim) {
  TransitionModel m;
  m.trunk = make_lstm(d + control_dim, hidden, rng);
  m.h0 = Tensor::zeros({hidden});
  m.c0 = Tensor::zeros({hidden});
  const int a_out = layout == MatrixLayout::kFull ? d * d : d;
  m.a_head = make_dense(hidden, a_out, Activation::kNone, rng);
  m.q_head = make_dense(hidden, d, Activation::kNone, rng);
  m.kind = kind;
  m.layout = layout;
  m.d = d;
  return m;
}

double inf_norm(const Tensor& a) {
  if (a.rank() == 1) {
    return a.max_abs();
  }
  double best = 0.0;
  for (int i = 0; i < a.dims[0]; ++i) {
    double s = 0.0;
    for (int j = 0; j < a.dims[1]; ++j) s += std::fabs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

StabilityReport stability_check(const Tensor& a) {
  StabilityReport rep;
  if (a.rank() == 1) {
    rep.row_sums.reserve(static_cast<size_t>(a.size()));
    for (double x : a.v) rep.row_sums.push_back(std::fabs(x));
    rep.inf_norm = a.max_abs();
    rep.spectral_radius = rep.inf_norm;  // diagonal: eigenvalues are the entries
    rep.contractive = rep.inf_norm < 1.0;
    return rep;
  }
  if (a.rank() != 2 || a.dims[0] != a.dims[1]) {
    throw TransitionError("stability_check expects a square matrix or diagonal vector, got " +
                          a.shape_str());
  }
  const int n = a.dims[0];
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::fabs(a(i, j));
    rep.row_sums.push_back(s);
    rep.inf_norm = std::max(rep.inf_norm, s);
  }
  // power iteration, geometric mean of the trailing growth ratios
  std::vector<double> x(static_cast<size_t>(n), 1.0 / std::sqrt(static_cast<double>(n)));
  double log_ratio_acc = 0.0;
  int tail = 0;
  const int iters = 200;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> y(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) y[static_cast<size_t>(i)] += a(i, j) * x[static_cast<size_t>(j)];
    }
    double norm = 0.0;
    for (double v : y) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      rep.spectral_radius = 0.0;
      rep.contractive = rep.inf_norm < 1.0;
      return rep;
    }
    if (it >= iters - 50) {
      log_ratio_acc += std::log(norm);
      ++tail;
    }
    for (size_t i = 0; i < y.size(); ++i) x[i] = y[i] / norm;
  }
  rep.spectral_radius = std::exp(log_ratio_acc / tail);
  rep.contractive = rep.inf_norm < 1.0;
  return rep;
}

std::string StabilityReport::to_json() const {
  std::string s = "{\"inf_norm\":";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", inf_norm);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%.17g", spectral_radius);
  s += std::string(",\"spectral_radius\":") + buf;
  s += ",\"row_sums\":[";
  for (size_t i = 0; i < row_sums.size(); ++i) {
    if (i) s += ",";
    std::snprintf(buf, sizeof(buf), "%.17g", row_sums[i]);
    s += buf;
  }
  s += "],\"verdict\":\"";
  s += contractive ? "contractive" : "not-contractive";
  s += "\"}";
  return s;
}

RolloutDecay rollout_decay(const TransitionSource& source, const Tensor& z0, int steps) {
  if (steps < 1) throw TransitionError("rollout_decay needs at least one step");
  if (!z0.all_finite()) throw TransitionError("rollout_decay: non-finite initial state");
  RolloutDecay out;
  Tensor z = z0.detached();
  const double z0_norm = z0.max_abs();
  double max_a_norm = 0.0;
  for (int k = 1; k <= steps; ++k) {
    Tensor a = source(k - 1);
    max_a_norm = std::max(max_a_norm, inf_norm(a));
    z = a.rank() == 2 ? matmul(a, z) : mul(a, z);
    const double observed = z.max_abs();
    const double bound = std::pow(max_a_norm, k) * z0_norm;
    out.observed.push_back(observed);
    out.bound.push_back(bound);
    if (observed > bound + 1e-12) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "rollout_decay: step %d observed %.17g exceeds bound %.17g", k, observed,
                    bound);
      throw DivergenceError(buf);
    }
  }
  return out;
}

}  // namespace dynakf
