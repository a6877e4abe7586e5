#include "dynakf/random.hpp"

#include <cmath>
#include <limits>

namespace dynakf {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr double kTwoPi = 6.283185307179586476925286766559;
// post-normalization floor keeping every simplex entry strictly positive
constexpr double kSimplexFloor = 1e-12;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  ++ctr_;
  return mix64(seed_ + ctr_ * kGolden);
}

double RngStream::uniform01() {
  // 53-bit mantissa, shifted into the open interval
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  double u1 = uniform01();
  double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

RngStream RngStream::split(std::uint64_t key) const {
  return RngStream(mix64(seed_ ^ mix64(key + kGolden)));
}

double RngStream::gamma(double alpha) { return std::exp(log_gamma(alpha)); }

double RngStream::log_gamma(double alpha) {
  if (!(alpha > 0.0)) throw RandomError("gamma sampler requires alpha > 0");
  double boost_log = 0.0;
  double a = alpha;
  if (a < 1.0) {
    // Gamma(a) = Gamma(a+1) * U^(1/a); keep the boost factor in log space
    boost_log = std::log(uniform01()) / a;
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, cube;
    do {
      x = normal();
      cube = 1.0 + c * x;
    } while (cube <= 0.0);
    const double v = cube * cube * cube;
    const double u = uniform01();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2 ||
        std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return std::log(d * v) + boost_log;
    }
  }
}

double incgamma_p_logx(double a, double log_x) {
  if (!(a > 0.0)) throw RandomError("incgamma_p requires a > 0");
  if (log_x == -std::numeric_limits<double>::infinity()) return 0.0;
  const double x = std::exp(log_x);
  if (x < a + 1.0) {
    // series for P(a,x); the x^a prefactor is built in log space
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(a * log_x - x - std::lgamma(a));
  }
  // Lentz continued fraction for Q(a,x)
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  const double q = std::exp(a * log_x - x - std::lgamma(a)) * h;
  return 1.0 - q;
}

double incgamma_p(double a, double x) {
  if (x < 0.0) throw RandomError("incgamma_p requires x >= 0");
  if (x == 0.0) return 0.0;
  return incgamma_p_logx(a, std::log(x));
}

double incgamma_p_da(double a, double log_x) {
  const double h = std::min(1e-4 * std::max(a, 1e-4), 0.5 * a);
  return (incgamma_p_logx(a + h, log_x) - incgamma_p_logx(a - h, log_x)) / (2.0 * h);
}

double incgamma_p_inv_log(double a, double u) {
  if (!(u > 0.0 && u < 1.0)) throw RandomError("incgamma_p_inv_log requires u in (0,1)");
  // bracket log x, then bisect + Newton polish; the small-x series
  // P ~ x^a / Gamma(a+1) gives the left bracket
  double lo = std::min(-60.0, (std::log(u) + std::lgamma(a + 1.0)) / a - 5.0);
  double hi = 40.0;
  if (incgamma_p_logx(a, hi) < u) {
    while (incgamma_p_logx(a, hi) < u && hi < 1e4) hi += 10.0;
  }
  double lx = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double p = incgamma_p_logx(a, lx);
    if (p > u) {
      hi = lx;
    } else {
      lo = lx;
    }
    // Newton step in log space: d/dlx P(a, e^lx) = x * pdf = exp(a*lx - x - lgamma(a))
    const double x = std::exp(lx);
    const double slope = std::exp(a * lx - x - std::lgamma(a));
    double next = lx;
    if (slope > 0.0 && std::isfinite(slope)) next = lx - (p - u) / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - lx) < 1e-15 * std::max(1.0, std::fabs(lx))) {
      lx = next;
      break;
    }
    lx = next;
  }
  return lx;
}

double gamma_log_sample_grad(double alpha, double lx) {
  if (!std::isfinite(lx)) return 0.0;
  const double x = std::exp(lx);
  // x * pdf(x; alpha) = exp(alpha*lx - x - lgamma(alpha))
  const double xpdf = std::exp(alpha * lx - x - std::lgamma(alpha));
  if (!(xpdf > 0.0) || !std::isfinite(xpdf)) return 0.0;
  const double dpda = incgamma_p_da(alpha, lx);
  const double s = -dpda / xpdf;
  return std::isfinite(s) ? s : 0.0;
}

Tensor sample_gaussian(const std::vector<int>& shape, double mu, double sigma,
                       RngStream& rng) {
  if (sigma < 0.0) throw RandomError("sample_gaussian requires sigma >= 0");
  Tensor out = Tensor::zeros(shape);
  if (sigma == 0.0) {
    for (double& x : out.v) x = mu;
    return out;
  }
  for (double& x : out.v) x = mu + sigma * rng.normal();
  return out;
}

namespace {

Tensor finish_dirichlet(const Tensor& alpha, const std::vector<double>& log_draws,
                        std::vector<double> grads) {
  const int k = alpha.size();
  double lmax = -std::numeric_limits<double>::infinity();
  for (double l : log_draws) lmax = std::max(lmax, l);
  Tensor out = Tensor::zeros(alpha.dims);
  double denom = 0.0;
  for (int i = 0; i < k; ++i) {
    out.v[static_cast<size_t>(i)] = std::exp(log_draws[static_cast<size_t>(i)] - lmax);
    denom += out.v[static_cast<size_t>(i)];
  }
  double floored = 0.0;
  for (int i = 0; i < k; ++i) {
    double& y = out.v[static_cast<size_t>(i)];
    y /= denom;
    if (y < kSimplexFloor) {
      y = kSimplexFloor;
      grads[static_cast<size_t>(i)] = 0.0;  // clamped entries are saturated
    }
    floored += y;
  }
  for (double& y : out.v) y /= floored;

  if (active_tape() != nullptr && alpha.node >= 0) {
    Tensor a_in = alpha;  // already tracked
    Node n;
    n.op = Op::kDirichlet;
    n.a = a_in.node;
    n.out = out.detached();
    n.aux = std::move(grads);
    int id = active_tape()->push(std::move(n));
    out.node = id;
    out.tape_serial = active_tape()->serial();
  }
  return out;
}

void check_alpha(const Tensor& alpha) {
  if (alpha.rank() != 1 || alpha.size() < 1) {
    throw RandomError("dirichlet concentration must be a non-empty vector, got " +
                      alpha.shape_str());
  }
  for (int i = 0; i < alpha.size(); ++i) {
    if (!(alpha.v[static_cast<size_t>(i)] > 0.0)) {
      throw RandomError("dirichlet concentration entry " + std::to_string(i) +
                        " is not positive");
    }
  }
}

}  // namespace

Tensor sample_dirichlet(const Tensor& alpha, RngStream& rng,
                        std::vector<double>* record_base) {
  check_alpha(alpha);
  const int k = alpha.size();
  std::vector<double> log_draws(static_cast<size_t>(k));
  std::vector<double> grads(static_cast<size_t>(k));
  const bool want_grads = active_tape() != nullptr && alpha.node >= 0;
  for (int i = 0; i < k; ++i) {
    const double a = alpha.v[static_cast<size_t>(i)];
    const double lx = rng.log_gamma(a);
    log_draws[static_cast<size_t>(i)] = lx;
    if (want_grads) grads[static_cast<size_t>(i)] = gamma_log_sample_grad(a, lx);
    if (record_base != nullptr) record_base->push_back(incgamma_p_logx(a, lx));
  }
  return finish_dirichlet(alpha, log_draws, std::move(grads));
}

Tensor sample_dirichlet_frozen(const Tensor& alpha, const std::vector<double>& base_u) {
  check_alpha(alpha);
  const int k = alpha.size();
  if (static_cast<int>(base_u.size()) != k) {
    throw RandomError("frozen dirichlet base noise length " + std::to_string(base_u.size()) +
                      " != alpha length " + std::to_string(k));
  }
  std::vector<double> log_draws(static_cast<size_t>(k));
  std::vector<double> grads(static_cast<size_t>(k));
  const bool want_grads = active_tape() != nullptr && alpha.node >= 0;
  for (int i = 0; i < k; ++i) {
    const double a = alpha.v[static_cast<size_t>(i)];
    double u = base_u[static_cast<size_t>(i)];
    u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
    const double lx = incgamma_p_inv_log(a, u);
    log_draws[static_cast<size_t>(i)] = lx;
    if (want_grads) grads[static_cast<size_t>(i)] = gamma_log_sample_grad(a, lx);
  }
  return finish_dirichlet(alpha, log_draws, std::move(grads));
}

}  // namespace dynakf
