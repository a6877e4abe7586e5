#include "dynakf/emission.hpp"

#include <cmath>
#include <numeric>

namespace dynakf {

Tensor EmissionMatrix::realized() const {
  Tensor h = Tensor::zeros({m, d});
  for (int i = 0; i < m; ++i) h(i, offset + i) = 1.0;
  return h;
}

Tensor EmissionMatrix::select(const Tensor& z) const {
  if (z.size() != d) {
    throw EmissionError("emission select: latent dim " + z.shape_str() + " != " +
                        std::to_string(d));
  }
  if (m == d && offset == 0) return z;
  return slice(z, offset, m);
}

Tensor EmissionMatrix::lift(const Tensor& a) const {
  if (a.size() != m) {
    throw EmissionError("emission lift: feature dim " + a.shape_str() + " != " +
                        std::to_string(m));
  }
  if (m == d && offset == 0) return a;
  Tensor out = a;
  if (offset > 0) out = concat(Tensor::zeros({offset}), out);
  const int tail = d - offset - m;
  if (tail > 0) out = concat(out, Tensor::zeros({tail}));
  return out;
}

EmissionMatrix emission_identity(int d) {
  if (d < 1) throw EmissionError("identity emission needs d >= 1");
  return {EmissionMode::kIdentity, d, d, 0};
}

EmissionMatrix emission_leading(int m, int d) {
  if (m < 1 || m > d) {
    throw EmissionError("leading-m emission needs 1 <= m <= d, got m=" + std::to_string(m) +
                        " d=" + std::to_string(d));
  }
  if (m == d) return emission_identity(d);
  return {EmissionMode::kLeadingM, m, d, 0};
}

std::vector<int> cumulative_offsets(const std::vector<int>& block_layout) {
  std::vector<int> offs(block_layout.size(), 0);
  for (size_t i = 1; i < block_layout.size(); ++i) {
    offs[i] = offs[i - 1] + block_layout[i - 1];
  }
  return offs;
}

EmissionMatrix emission_block(int block_index, const std::vector<int>& block_layout) {
  const int d = std::accumulate(block_layout.begin(), block_layout.end(), 0);
  if (block_index < 0 || block_index >= static_cast<int>(block_layout.size())) {
    throw EmissionError("block index " + std::to_string(block_index) +
                        " outside layout of " + std::to_string(block_layout.size()) + " blocks");
  }
  for (int b : block_layout) {
    if (b < 1) throw EmissionError("block layout entries must be >= 1");
  }
  const auto offs = cumulative_offsets(block_layout);
  const int m = block_layout[static_cast<size_t>(block_index)];
  if (m == d) return emission_identity(d);
  EmissionMatrix h{EmissionMode::kBlockSelect, m, d, offs[static_cast<size_t>(block_index)]};
  if (h.offset == 0) h.mode = EmissionMode::kLeadingM;
  return h;
}

ObservationPacket Encoder::encode(const Tensor& x, RngStream* rng) const {
  Tensor h = trunk.forward(x);
  double floor_a = eps0, floor_r = eps0;
  if (jitter && rng != nullptr) {
    floor_a += std::fabs(jitter_sigma * rng->normal());
    floor_r += std::fabs(jitter_sigma * rng->normal());
  }
  ObservationPacket pkt;
  pkt.a = add_scalar(relu(head_a.forward(h)), floor_a);
  pkt.r_diag = add_scalar(relu(head_r.forward(h)), floor_r);
  pkt.block_dims = {pkt.a.size()};
  pkt.present = {true};
  return pkt;
}

void Encoder::collect(ParamList& out, const std::string& prefix) {
  trunk.collect(out, prefix + ".trunk");
  out.push_back({prefix + ".head_a.w", &head_a.w});
  out.push_back({prefix + ".head_a.b", &head_a.b});
  out.push_back({prefix + ".head_r.w", &head_r.w});
  out.push_back({prefix + ".head_r.b", &head_r.b});
}

Encoder make_encoder(int in_dim, int hidden, int feat_dim, RngStream& rng,
                     double a_bias_init, double r_bias_init) {
  Encoder enc;
  enc.trunk = make_mlp({in_dim, hidden}, {Activation::kRelu}, rng);
  enc.head_a = make_dense(hidden, feat_dim, Activation::kNone, rng);
  enc.head_r = make_dense(hidden, feat_dim, Activation::kNone, rng);
  for (double& b : enc.head_a.b.v) b = a_bias_init;
  for (double& b : enc.head_r.b.v) b = r_bias_init;
  return enc;
}

ObservationPacket fuse(const std::vector<ObservationPacket>& packets) {
  if (packets.empty()) throw EmissionError("fuse: empty packet list");
  ObservationPacket out;
  bool first_present = true;
  for (const auto& p : packets) {
    for (size_t b = 0; b < p.block_dims.size(); ++b) {
      out.block_dims.push_back(p.block_dims[b]);
      out.present.push_back(p.present[b]);
    }
    if (p.a.size() == 0) continue;
    if (first_present) {
      out.a = p.a;
      out.r_diag = p.r_diag;
      first_present = false;
    } else {
      out.a = concat(out.a, p.a);
      out.r_diag = concat(out.r_diag, p.r_diag);
    }
  }
  return out;
}

}  // namespace dynakf
