#include "doctest.h"

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <random>

#include "dynakf/random.hpp"
#include "dynakf/tensor.hpp"
#include "test_support.hpp"

using namespace dynakf;

TEST_CASE("forward op examples") {
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor x = Tensor::matrix(2, 1, {3, 4});
  Tensor y = matmul(eye, x);
  CHECK(y.dims == std::vector<int>{2, 1});
  CHECK(y.v == std::vector<double>{3, 4});

  CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
  CHECK(dynakf::tanh(Tensor::scalar(0)).item() == doctest::Approx(0.0));

  Tensor r = relu(Tensor::vec({-2.0, 0.5}));
  CHECK(r.v == std::vector<double>{0.0, 0.5});
}

TEST_CASE("forward shape and finiteness errors") {
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::vec({1, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2,3)"), ShapeError);
  CHECK_THROWS_WITH_AS(add(Tensor::vec({1, 2}), Tensor::vec({1, 2, 3})),
                       doctest::Contains("(3)"), ShapeError);
  CHECK_THROWS_WITH_AS(dynakf::log(Tensor::vec({0.0})), doctest::Contains("log"),
                       NonFiniteError);
  CHECK_THROWS_AS(divide(Tensor::vec({1.0}), Tensor::vec({0.0})), NonFiniteError);
}

TEST_CASE("scalar broadcasting") {
  Tensor x = Tensor::vec({1, 2, 3});
  Tensor s = Tensor::scalar(2);
  CHECK(mul(x, s).v == std::vector<double>{2, 4, 6});
  CHECK(mul(s, x).v == std::vector<double>{2, 4, 6});
  CHECK(sub(s, x).v == std::vector<double>{1, 0, -1});
  CHECK(divide(x, s).v == std::vector<double>{0.5, 1.0, 1.5});
}

TEST_CASE("backward: x*x at x=3 gives 6") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::scalar(3);
  tape.leaf(x);
  Tensor loss = mul(x, x);
  Gradients g = tape.backward(loss);
  CHECK(g.at(x).item() == doctest::Approx(6.0));
}

TEST_CASE("backward: sum(A*x) gradient is column sums of A") {
  Tape tape;
  TapeScope scope(tape);
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor x = Tensor::vec({0.5, -1.0, 2.0});
  tape.leaf(x);
  Tensor loss = sum(matmul(a, x));
  Gradients g = tape.backward(loss);
  Tensor gx = g.at(x);
  CHECK(gx.v[0] == doctest::Approx(5.0));
  CHECK(gx.v[1] == doctest::Approx(7.0));
  CHECK(gx.v[2] == doctest::Approx(9.0));
}

TEST_CASE("backward error paths") {
  SUBCASE("loss must be scalar") {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::vec({1, 2});
    tape.leaf(x);
    Tensor y = mul(x, x);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), TapeError);
  }
  SUBCASE("tape is single use") {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::scalar(1);
    tape.leaf(x);
    Tensor y = mul(x, x);
    (void)tape.backward(y);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("consumed"), TapeError);
  }
  SUBCASE("loss not on tape") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1)), TapeError);
  }
  SUBCASE("tensors from another tape are rejected") {
    Tensor stale;
    {
      Tape t1;
      TapeScope s1(t1);
      Tensor x = Tensor::scalar(1);
      t1.leaf(x);
      stale = mul(x, x);
    }
    Tape t2;
    TapeScope s2(t2);
    Tensor y = Tensor::scalar(2);
    t2.leaf(y);
    CHECK_THROWS_AS(mul(stale, y), TapeError);
  }
}

TEST_CASE("unreached nodes get zero gradients") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::scalar(3);
  Tensor unused = Tensor::vec({1, 2, 3});
  tape.leaf(x);
  tape.leaf(unused);
  Tensor loss = mul(x, x);
  Gradients g = tape.backward(loss);
  CHECK_FALSE(g.reached(unused.node));
  Tensor gz = g.at(unused);
  CHECK(gz.dims == unused.dims);
  CHECK(gz.max_abs() == 0.0);
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 gen(7);
  auto check_unary = [&](const char* name, Tensor (*op)(const Tensor&), double lo,
                         double hi) {
    CAPTURE(name);
    Tensor x = testsup::random_tensor({5}, gen, lo, hi);
    auto fn = [&](const std::vector<Tensor>& p) { return sum(op(p[0])); };
    auto rep = grad_check(fn, {{name, x}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  };
  check_unary("sigmoid", &sigmoid, -2, 2);
  check_unary("tanh", &dynakf::tanh, -2, 2);
  check_unary("relu", &relu, -2, 2);
  check_unary("exp", &dynakf::exp, -2, 2);
  check_unary("log", &dynakf::log, 0.2, 2);
  check_unary("square", &square, -2, 2);
  check_unary("reciprocal", &reciprocal, 0.3, 2);

  SUBCASE("binary and structural ops") {
    Tensor a = testsup::random_tensor({2, 3}, gen);
    Tensor b = testsup::random_tensor({3, 2}, gen);
    auto rep = grad_check(
        [](const std::vector<Tensor>& p) { return sum(matmul(p[0], p[1])); },
        {{"a", a}, {"b", b}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());

    Tensor x = testsup::random_tensor({4}, gen);
    Tensor y = testsup::random_tensor({4}, gen, 0.5, 2.0);
    rep = grad_check(
        [](const std::vector<Tensor>& p) {
          Tensor t = add(p[0], p[1]);
          t = mul(t, sub(p[0], p[1]));
          t = divide(t, p[1]);
          return sum(square(concat(slice(t, 1, 2), t)));
        },
        {{"x", x}, {"y", y}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());

    Tensor m = testsup::random_tensor({3, 2}, gen);
    rep = grad_check(
        [](const std::vector<Tensor>& p) {
          return sum(square(reshape(transpose(p[0]), {3, 2})));
        },
        {{"m", m}, {"x", x}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  }

  SUBCASE("spd_inverse") {
    Tensor l = testsup::random_tensor({3, 3}, gen, -0.5, 0.5);
    for (int i = 0; i < 3; ++i) l(i, i) = 2.0 + std::fabs(l(i, i));
    auto rep = grad_check(
        [](const std::vector<Tensor>& p) {
          // build an SPD matrix from the parameter, then invert
          Tensor spd = matmul(p[0], transpose(p[0]));
          return sum(spd_inverse(spd));
        },
        {{"l", l}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  }
}

TEST_CASE("randomized multi-op graphs match finite differences") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 gen(seed * 7919 + 13);
    Tensor x = testsup::random_tensor({4}, gen);
    Tensor w = testsup::random_tensor({4, 4}, gen, -0.8, 0.8);
    std::uniform_int_distribution<int> pick(0, 6);
    std::vector<int> ops;
    for (int i = 0; i < 5; ++i) ops.push_back(pick(gen));
    auto fn = [&](const std::vector<Tensor>& p) {
      Tensor t = p[0];
      for (int op : ops) {
        switch (op) {
          case 0: t = sigmoid(t); break;
          case 1: t = dynakf::tanh(t); break;
          case 2: t = square(dynakf::tanh(t)); break;
          case 3: t = dynakf::tanh(matmul(p[1], t)); break;
          case 4: t = add(t, p[0]); break;
          case 5: t = mul(t, Tensor::scalar(0.7)); break;
          case 6: t = dynakf::exp(mul_scalar(dynakf::tanh(t), 0.3)); break;
        }
      }
      // keep every parameter's gradient away from zero so the relative
      // error against finite differences stays meaningful
      Tensor bias = sum(mul(p[0], Tensor::vec({0.21, 0.33, 0.47, 0.59})));
      return add(sum(t), add(bias, mul_scalar(sum(matmul(p[1], p[0])), 0.05)));
    };
    auto rep = grad_check(fn, {{"x", x}, {"w", w}}, 1e-6, 1e-6);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  }
}

TEST_CASE("grad_check examples") {
  SUBCASE("x^2 at 3") {
    auto fn = [](const std::vector<Tensor>& p) { return mul(p[0], p[0]); };
    auto rep = grad_check(fn, {{"x", Tensor::scalar(3)}}, 1e-6, 1e-6);
    REQUIRE(rep.entries.size() == 1);
    CHECK(rep.entries[0].max_rel_err < 1e-9);
    CHECK(rep.all_pass);
  }
  SUBCASE("constant function passes with zero gradients") {
    auto fn = [](const std::vector<Tensor>& p) {
      return add(mul_scalar(sum(p[0]), 0.0), Tensor::scalar(5.0));
    };
    auto rep = grad_check(fn, {{"x", Tensor::vec({1, 2, 3})}}, 1e-6, 1e-6);
    CHECK(rep.all_pass);
    CHECK(rep.entries[0].max_rel_err == 0.0);
  }
}

TEST_CASE("tape evaluation is order deterministic") {
  auto run = [] {
    RngStream rng(42);
    Tensor x = sample_gaussian({6}, 0.0, 1.0, rng);
    Tensor w = sample_gaussian({6, 6}, 0.0, 0.5, rng);
    Tape tape;
    TapeScope scope(tape);
    tape.leaf(x);
    Tensor y = sigmoid(matmul(w, x));
    y = mul(y, y);
    return sum(y).item();
  };
  CHECK(run() == run());
}

TEST_CASE("sample_gaussian") {
  RngStream rng(1);
  SUBCASE("sigma zero returns constant mu") {
    Tensor t = sample_gaussian({4}, 0.0, 0.0, rng);
    CHECK(t.max_abs() == 0.0);
    Tensor t2 = sample_gaussian({3}, 2.5, 0.0, rng);
    for (double x : t2.v) CHECK(x == 2.5);
  }
  SUBCASE("moments at 1e5 samples") {
    Tensor t = sample_gaussian({100000}, 0.0, 1.0, rng);
    double mean = 0.0;
    for (double x : t.v) mean += x;
    mean /= t.size();
    double var = 0.0;
    for (double x : t.v) var += (x - mean) * (x - mean);
    var /= t.size();
    CHECK(std::fabs(mean) < 0.02);
    CHECK(std::fabs(var - 1.0) < 0.02);
  }
  SUBCASE("same seed twice is bit identical") {
    RngStream a(99), b(99);
    Tensor ta = sample_gaussian({50}, 0.0, 1.0, a);
    Tensor tb = sample_gaussian({50}, 0.0, 1.0, b);
    CHECK(ta.v == tb.v);
  }
  SUBCASE("negative sigma rejected") {
    CHECK_THROWS_AS(sample_gaussian({2}, 0.0, -1.0, rng), RandomError);
  }
}

TEST_CASE("rng stream replay is bit exact") {
  RngStream a(1234), b(1234);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  for (int i = 0; i < 50; ++i) {
    CHECK(a.gamma(0.7 + i * 0.1) == b.gamma(0.7 + i * 0.1));
  }
}

TEST_CASE("dirichlet sampling") {
  SUBCASE("symmetric mean 1/K over 1e5 samples") {
    RngStream rng(5);
    Tensor alpha = Tensor::vec({1, 1, 1, 1});
    std::vector<double> mean(4, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Tensor s = sample_dirichlet(alpha, rng);
      for (int j = 0; j < 4; ++j) mean[static_cast<size_t>(j)] += s.v[static_cast<size_t>(j)];
    }
    for (double& m : mean) m /= n;
    for (double m : mean) CHECK(m == doctest::Approx(0.25).epsilon(0.02));
    for (double m : mean) CHECK(std::fabs(m - 0.25) < 0.005);
  }
  SUBCASE("samples stay strictly inside the simplex") {
    RngStream rng(6);
    for (int trial = 0; trial < 2000; ++trial) {
      int k = 2 + static_cast<int>(rng.next_u64() % 7);
      Tensor alpha = Tensor::zeros({k});
      for (double& a : alpha.v) a = 1e-4 + 3.0 * rng.uniform01() * (rng.uniform01() < 0.3 ? 0.001 : 1.0);
      Tensor s = sample_dirichlet(alpha, rng);
      double total = 0.0;
      for (double x : s.v) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        total += x;
      }
      CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
  }
  SUBCASE("non-positive concentration reports the index") {
    RngStream rng(7);
    Tensor alpha = Tensor::vec({0.5, 0.0, 1.0});
    CHECK_THROWS_WITH_AS(sample_dirichlet(alpha, rng), doctest::Contains("entry 1"),
                         RandomError);
  }
}

// Independent oracle for the pathwise gradient: freeze the base noise
// u_i = P(alpha_i, x_i) via Boost's incomplete gamma, replay the draw with
// Boost's gamma_p_inv at perturbed alpha, and take central differences.
TEST_CASE("dirichlet pathwise gradient matches frozen-noise finite differences") {
  RngStream rng(11);
  Tensor alpha = Tensor::vec({0.3, 1.2, 2.5, 0.7});
  Tensor w = Tensor::vec({0.9, -0.4, 0.3, 1.5});

  std::vector<double> base_u;
  Tape tape;
  Tensor g_ad;
  Tensor y0;
  {
    TapeScope scope(tape);
    tape.leaf(alpha);
    Tensor y = sample_dirichlet(alpha, rng, &base_u);
    y0 = y.detached();
    Tensor loss = sum(mul(y, w));
    Gradients g = tape.backward(loss);
    g_ad = g.at(alpha);
  }
  REQUIRE(base_u.size() == 4);

  auto replay = [&](const std::vector<double>& a) {
    std::vector<double> x(4);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      x[static_cast<size_t>(i)] = boost::math::gamma_p_inv(a[static_cast<size_t>(i)],
                                                           base_u[static_cast<size_t>(i)]);
      s += x[static_cast<size_t>(i)];
    }
    double val = 0.0;
    for (int i = 0; i < 4; ++i) val += w.v[static_cast<size_t>(i)] * x[static_cast<size_t>(i)] / s;
    return val;
  };

  // the frozen replay reproduces the realized sample
  {
    std::vector<double> a(alpha.v.begin(), alpha.v.end());
    std::vector<double> x(4);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      x[static_cast<size_t>(i)] = boost::math::gamma_p_inv(a[static_cast<size_t>(i)],
                                                           base_u[static_cast<size_t>(i)]);
      s += x[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      CHECK(x[static_cast<size_t>(i)] / s ==
            doctest::Approx(y0.v[static_cast<size_t>(i)]).epsilon(1e-8));
    }
  }

  for (int i = 0; i < 4; ++i) {
    std::vector<double> ap(alpha.v.begin(), alpha.v.end());
    std::vector<double> am(alpha.v.begin(), alpha.v.end());
    const double eps = 1e-5 * alpha.v[static_cast<size_t>(i)];
    ap[static_cast<size_t>(i)] += eps;
    am[static_cast<size_t>(i)] -= eps;
    const double g_fd = (replay(ap) - replay(am)) / (2.0 * eps);
    const double g = g_ad.v[static_cast<size_t>(i)];
    const double rel = std::fabs(g - g_fd) / std::max(1e-8, std::fabs(g) + std::fabs(g_fd));
    CAPTURE(i);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("frozen dirichlet replay is differentiable and self consistent") {
  // covers tiny-alpha entries where linear-space replay would underflow
  Tensor alpha = Tensor::vec({1e-4, 0.8, 2.0});
  RngStream rng(13);
  std::vector<double> base_u;
  {
    Tape t;
    TapeScope s(t);
    Tensor a = alpha;
    t.leaf(a);
    (void)sample_dirichlet(a, rng, &base_u);
  }
  Tensor w = Tensor::vec({0.5, -1.0, 0.25});
  auto fn = [&](const std::vector<Tensor>& p) {
    Tensor y = sample_dirichlet_frozen(p[0], base_u);
    return sum(mul(y, w));
  };
  auto rep = grad_check(fn, {{"alpha", alpha}}, 1e-7, 1e-3);
  CHECK_MESSAGE(rep.all_pass, rep.summary());
}

TEST_CASE("incomplete gamma agrees with boost") {
  RngStream rng(17);
  for (int i = 0; i < 200; ++i) {
    double a = std::exp(rng.uniform01() * 6.0 - 3.0);
    double x = std::exp(rng.uniform01() * 6.0 - 3.0);
    double ours = incgamma_p(a, x);
    double ref = boost::math::gamma_p(a, x);
    CHECK(ours == doctest::Approx(ref).epsilon(1e-10));
  }
}
