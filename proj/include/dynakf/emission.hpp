#pragma once

#include <optional>
#include <vector>

#include "dynakf/nn.hpp"
#include "dynakf/tensor.hpp"

namespace dynakf {

struct EmissionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Encoded features with their learned diagonal observation noise. The
/// modality mask records which declared feature blocks are present.
struct ObservationPacket {
  Tensor a;       // (m) strictly positive features
  Tensor r_diag;  // (m) strictly positive noise diagonal
  std::vector<int> block_dims;
  std::vector<bool> present;

  int dim() const { return a.size(); }
};

enum class EmissionMode { kIdentity, kLeadingM, kBlockSelect };

/// 0/1 selection matrix mapping d latent states to m observed features.
/// Always a contiguous block: offset 0 for identity/leading-m.
struct EmissionMatrix {
  EmissionMode mode = EmissionMode::kIdentity;
  int m = 0;
  int d = 0;
  int offset = 0;

  Tensor realized() const;                 // (m, d)
  Tensor select(const Tensor& z) const;    // H z  for rank-1 z of dim d
  Tensor lift(const Tensor& a) const;      // H^T a, zero-padded to dim d
};

EmissionMatrix emission_identity(int d);
EmissionMatrix emission_leading(int m, int d);
EmissionMatrix emission_block(int block_index, const std::vector<int>& block_layout);

std::vector<int> cumulative_offsets(const std::vector<int>& block_layout);

/// Neural emission encoder for one modality: shared trunk, feature head and
/// noise head, both floored at eps0 to stay strictly positive.
struct Encoder {
  Mlp trunk;
  DenseLayer head_a;
  DenseLayer head_r;
  double eps0 = 1e-4;
  bool jitter = false;         // optional |N(0, jitter_sigma)| added to the floor
  double jitter_sigma = 1e-4;

  ObservationPacket encode(const Tensor& x, RngStream* rng = nullptr) const;
  int in_dim() const { return trunk.in_dim(); }
  int out_dim() const { return head_a.out_dim(); }
  void collect(ParamList& out, const std::string& prefix);
};

Encoder make_encoder(int in_dim, int hidden, int feat_dim, RngStream& rng,
                     double a_bias_init = 0.0, double r_bias_init = 0.0);

/// Concatenates packets in declared order, skipping absent ones. The result's
/// block_dims/present always cover every declared block.
ObservationPacket fuse(const std::vector<ObservationPacket>& packets);

}  // namespace dynakf
