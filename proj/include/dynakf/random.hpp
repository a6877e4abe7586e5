#pragma once

#include <cstdint>
#include <vector>

#include "dynakf/tensor.hpp"

namespace dynakf {

struct RandomError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Counter-based pseudo-random stream (SplitMix64 over seed + counter).
/// The same seed and the same call sequence reproduce every sample
/// bit-exactly; split() derives an independent child stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in the open interval (0,1).
  double uniform01();
  /// Standard normal via Box-Muller (consumes two uniforms).
  double normal();
  /// Gamma(alpha, 1) via Marsaglia-Tsang, shape-boosted for alpha < 1.
  double gamma(double alpha);
  /// log of a Gamma(alpha, 1) draw; stays finite where the draw itself
  /// would underflow (tiny alpha).
  double log_gamma(double alpha);

  RngStream split(std::uint64_t key) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return ctr_; }

 private:
  std::uint64_t seed_;
  std::uint64_t ctr_ = 0;
};

/// Regularized lower incomplete gamma P(a, x), with a log-space entry point
/// for x too small to represent.
double incgamma_p(double a, double x);
double incgamma_p_logx(double a, double log_x);
/// d/da of incgamma_p at fixed x (central differences in a).
double incgamma_p_da(double a, double log_x);
/// Inverse of incgamma_p in x for fixed a, returned as log x.
double incgamma_p_inv_log(double a, double u);

/// d log x / d alpha for a Gamma(alpha,1) draw with log value lx, under
/// implicit reparameterization (the quantile path at frozen base noise).
double gamma_log_sample_grad(double alpha, double lx);

/// i.i.d. Gaussian tensor; sigma = 0 returns constant mu.
Tensor sample_gaussian(const std::vector<int>& shape, double mu, double sigma,
                       RngStream& rng);

/// One draw from Dirichlet(alpha). Entries lie strictly inside (0,1) and sum
/// to 1 within 1e-12. Differentiable wrt alpha when recorded on a tape, via
/// implicit reparameterization of the underlying Gamma draws. If record_base
/// is given, the base noise u_i = P(alpha_i, x_i) of each draw is appended so
/// the draw can be replayed under perturbed alpha.
Tensor sample_dirichlet(const Tensor& alpha, RngStream& rng,
                        std::vector<double>* record_base = nullptr);

/// Replays a Dirichlet draw at the given base noise: x_i is the u_i-quantile
/// of Gamma(alpha_i, 1). Same gradient construction as sample_dirichlet.
Tensor sample_dirichlet_frozen(const Tensor& alpha, const std::vector<double>& base_u);

}  // namespace dynakf
