#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>

#include "json.hpp"

#include "dynakf/filter.hpp"
#include "dynakf/simlab.hpp"
#include "oracles/reference_kf.hpp"
#include "test_support.hpp"

using namespace dynakf;

namespace {

LatentBelief diag_belief(std::vector<double> z, std::vector<double> p) {
  LatentBelief b;
  b.z = Tensor::vec(std::move(z));
  b.p = Tensor::vec(std::move(p));
  return b;
}

TransitionPacket diag_packet(std::vector<double> a, std::vector<double> q) {
  TransitionPacket pkt;
  pkt.a = Tensor::vec(std::move(a));
  pkt.q_diag = Tensor::vec(std::move(q));
  return pkt;
}

ObservationPacket obs_packet(std::vector<double> a, std::vector<double> r) {
  ObservationPacket pkt;
  pkt.a = Tensor::vec(std::move(a));
  pkt.r_diag = Tensor::vec(std::move(r));
  pkt.block_dims = {pkt.a.size()};
  pkt.present = {true};
  return pkt;
}

ModelConfig tiny_config(TransitionKind kind, MatrixLayout layout) {
  ModelConfig mc;
  mc.d = 4;
  mc.modality_obs_dims = {6};
  mc.modality_feat_dims = {4};
  mc.encoder_hidden = 5;
  mc.transition_hidden = 6;
  mc.kind = kind;
  mc.layout = layout;
  mc.init_seed = 3;
  return mc;
}

std::vector<StepInput> synth_steps(int t_len, int obs_dim, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<StepInput> steps;
  for (int t = 0; t < t_len; ++t) {
    StepInput in;
    in.obs.push_back(sample_gaussian({obs_dim}, 0.0, 1.0, rng));
    in.present.push_back(true);
    steps.push_back(in);
  }
  return steps;
}

}  // namespace

TEST_CASE("predict examples") {
  SUBCASE("identity dynamics with zero noise leave the belief unchanged") {
    LatentBelief b = diag_belief({1, 2}, {0.5, 0.25});
    TransitionPacket pkt = diag_packet({1, 1}, {0, 0});
    LatentBelief out = predict(b, pkt);
    CHECK(out.z.v == b.z.v);
    CHECK(out.p.v == b.p.v);
    CHECK(out.t == b.t + 1);
  }
  SUBCASE("diagonal arithmetic: a=0.5, z=4, P=1, Q=0.1") {
    LatentBelief b = diag_belief({4}, {1});
    LatentBelief out = predict(b, diag_packet({0.5}, {0.1}));
    CHECK(out.z.item() == doctest::Approx(2.0));
    CHECK(out.p.item() == doctest::Approx(0.35));
  }
  SUBCASE("full-mode covariance stays symmetric PSD") {
    RngStream rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor l = sample_gaussian({3, 3}, 0.0, 1.0, rng);
      Tensor p0 = matmul(l, transpose(l));
      LatentBelief b;
      b.z = sample_gaussian({3}, 0.0, 1.0, rng);
      b.p = p0;
      TransitionPacket pkt;
      pkt.a = sample_gaussian({3, 3}, 0.0, 0.5, rng);
      pkt.q_diag = Tensor::full({3}, 0.01);
      LatentBelief out = predict(b, pkt);
      Eigen::Matrix3d pm;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) pm(i, j) = out.p(i, j);
      }
      CHECK((pm - pm.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(pm);
      CHECK(es.eigenvalues().minCoeff() >= -1e-10);
    }
  }
  SUBCASE("shape mismatch throws") {
    LatentBelief b = diag_belief({1, 2}, {1, 1});
    CHECK_THROWS_AS(predict(b, diag_packet({0.5}, {0.1})), FilterError);
  }
}

TEST_CASE("update examples") {
  SUBCASE("H=I, P'=I, R=I halves the covariance") {
    LatentBelief prior = diag_belief({0, 0}, {1, 1});
    auto [post, rec] = update(prior, obs_packet({2, 2}, {1, 1}), emission_identity(2));
    CHECK(post.z.v[0] == doctest::Approx(1.0));
    CHECK(post.z.v[1] == doctest::Approx(1.0));
    CHECK(post.p.v[0] == doctest::Approx(0.5));
    CHECK(rec.k.v[0] == doctest::Approx(0.5));
    CHECK(rec.k_frobenius == doctest::Approx(std::sqrt(0.5)));
  }
  SUBCASE("huge R ignores the observation") {
    LatentBelief prior = diag_belief({1, -1}, {1, 1});
    auto [post, rec] = update(prior, obs_packet({100, 100}, {1e12, 1e12}),
                              emission_identity(2));
    CHECK(std::fabs(post.z.v[0] - 1.0) < 1e-9);
    CHECK(std::fabs(post.z.v[1] + 1.0) < 1e-9);
  }
  SUBCASE("selection H leaves unobserved coordinates at their prior") {
    LatentBelief prior = diag_belief({1, 2}, {0.5, 0.75});
    auto [post, rec] = update(prior, obs_packet({3}, {0.1}), emission_leading(1, 2));
    CHECK(post.z.v[1] == 2.0);
    CHECK(post.p.v[1] == 0.75);
    CHECK(post.z.v[0] != 1.0);
    CHECK(rec.r.item() == doctest::Approx(2.0));
  }
  SUBCASE("dim mismatch throws") {
    LatentBelief prior = diag_belief({1, 2}, {1, 1});
    CHECK_THROWS_AS(update(prior, obs_packet({1, 2, 3}, {1, 1, 1}), emission_identity(2)),
                    FilterError);
  }
}

TEST_CASE("filter_sequence matches the reference Kalman filter to 1e-9") {
  // full-covariance mode with fixed matrices against the Eigen textbook
  // implementation, over random stable systems
  RngStream rng(31);
  for (int sys = 0; sys < 20; ++sys) {
    const int d = 2 + static_cast<int>(rng.next_u64() % 5);  // up to 6
    const int m = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(d));
    const int t_len = 50;

    Tensor a = sample_gaussian({d, d}, 0.0, 0.8 / std::sqrt(static_cast<double>(d)), rng);
    Tensor q = Tensor::zeros({d});
    for (double& x : q.v) x = 0.01 + 0.2 * rng.uniform01();
    Tensor r = Tensor::zeros({m});
    for (double& x : r.v) x = 0.05 + 0.5 * rng.uniform01();
    EmissionMatrix h = emission_leading(m, d);

    LatentBelief belief;
    belief.z = sample_gaussian({d}, 0.0, 1.0, rng);
    belief.p = Tensor::identity(d);

    oracles::ReferenceKf ref;
    ref.a = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) ref.a(i, j) = a(i, j);
    }
    ref.h = Eigen::MatrixXd::Zero(m, d);
    for (int i = 0; i < m; ++i) ref.h(i, i) = 1.0;
    ref.q = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i) ref.q(i, i) = q.v[static_cast<size_t>(i)];
    ref.r = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) ref.r(i, i) = r.v[static_cast<size_t>(i)];
    ref.z = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) ref.z(i) = belief.z.v[static_cast<size_t>(i)];
    ref.p = Eigen::MatrixXd::Identity(d, d);

    std::vector<Eigen::VectorXd> ref_obs;
    double worst = 0.0;
    for (int t = 0; t < t_len; ++t) {
      Tensor obs_t = sample_gaussian({m}, 0.0, 1.0, rng);
      TransitionPacket pkt;
      pkt.a = a;
      pkt.q_diag = q;
      belief = predict(belief, pkt);
      auto [post, rec] = update(belief, obs_packet(std::vector<double>(obs_t.v),
                                                   std::vector<double>(r.v)),
                                h);
      belief = post;

      Eigen::VectorXd ov(m);
      for (int i = 0; i < m; ++i) ov(i) = obs_t.v[static_cast<size_t>(i)];
      ref_obs.push_back(ov);
      auto log = ref.run({ov});
      const auto& st = log.back();
      for (int i = 0; i < d; ++i) {
        worst = std::max(worst, std::fabs(st.z(i) - belief.z.v[static_cast<size_t>(i)]));
        for (int j = 0; j < d; ++j) {
          worst = std::max(worst, std::fabs(st.p(i, j) - belief.p(i, j)));
        }
      }
      for (int i = 0; i < m; ++i) {
        worst = std::max(worst, std::fabs(st.r(i) - rec.r.v[static_cast<size_t>(i)]));
        for (int j = 0; j < m; ++j) {
          worst = std::max(worst, std::fabs(st.s(i, j) - rec.s(i, j)));
        }
      }
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < m; ++j) {
          worst = std::max(worst, std::fabs(st.k(i, j) - rec.k(i, j)));
        }
      }
    }
    CAPTURE(sys);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("filter_sequence behaviors") {
  SUBCASE("posterior means converge toward constant observations") {
    // scalar system tracked through the diagonal path
    LatentBelief belief = diag_belief({0}, {1});
    double prev_gap = 10.0;
    for (int t = 0; t < 30; ++t) {
      belief = predict(belief, diag_packet({1.0}, {0.01}));
      auto [post, rec] = update(belief, obs_packet({5.0}, {1.0}), emission_identity(1));
      belief = post;
    }
    const double gap = std::fabs(belief.z.item() - 5.0);
    CHECK(gap < 0.5);
    CHECK(gap < prev_gap);
  }
  SUBCASE("absent observations reduce to open-loop prediction") {
    ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
    NeuralKalmanModel model = make_model(mc);
    auto steps = synth_steps(6, 6, 77);
    for (size_t t = 1; t < steps.size(); ++t) steps[t].present = {false};
    SampleContext ctx;
    SequenceRun run = filter_sequence(model, steps, ctx);

    std::vector<StepInput> first(steps.begin(), steps.begin() + 1);
    SampleContext ctx2;
    SequenceRun head = filter_sequence(model, first, ctx2);
    OpenLoopRun ol = open_loop(model, head.final_belief, head.final_lstm, 5, ctx2);
    for (int k = 0; k < 5; ++k) {
      CHECK(testsup::max_abs_diff(run.steps[static_cast<size_t>(k + 1)].prior.z,
                                  ol.priors[static_cast<size_t>(k)].z) < 1e-12);
      CHECK(testsup::max_abs_diff(run.steps[static_cast<size_t>(k + 1)].y_post,
                                  ol.y_prior[static_cast<size_t>(k)]) < 1e-12);
    }
  }
  SUBCASE("first step must carry an observation") {
    ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
    NeuralKalmanModel model = make_model(mc);
    auto steps = synth_steps(3, 6, 78);
    steps[0].present = {false};
    SampleContext ctx;
    CHECK_THROWS_AS(filter_sequence(model, steps, ctx), FilterError);
  }
}

TEST_CASE("open_loop examples") {
  ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
  NeuralKalmanModel model = make_model(mc);
  LatentBelief b = diag_belief({1, 1, 1, 1}, {1, 1, 1, 1});
  SampleContext ctx;
  SUBCASE("horizon 0 rejected, horizon 1 equals a single predict") {
    CHECK_THROWS_AS(open_loop(model, b, model.transition.initial_state(), 0, ctx),
                    FilterError);
    OpenLoopRun one = open_loop(model, b, model.transition.initial_state(), 1, ctx);
    SampleContext ctx2;
    TransitionPacket pkt =
        model.transition.step(b.z, model.transition.initial_state(), ctx2);
    LatentBelief manual = predict(b, pkt);
    CHECK(testsup::max_abs_diff(one.priors[0].z, manual.z) == 0.0);
  }
  SUBCASE("fixed deterministic 0.9 I decays geometrically") {
    LatentBelief s = diag_belief({1}, {0});
    Tensor a_fixed = Tensor::vec({0.9});
    LatentBelief cur = s;
    for (int i = 0; i < 10; ++i) cur = predict(cur, diag_packet({0.9}, {0}));
    CHECK(cur.z.item() == doctest::Approx(std::pow(0.9, 10)).epsilon(1e-12));
  }
}

TEST_CASE("predict_output examples") {
  ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
  NeuralKalmanModel model = make_model(mc);
  SUBCASE("zero-weight predictor outputs the zero pose") {
    model.pred_trans.w = Tensor::zeros(model.pred_trans.w.dims);
    model.pred_trans.b = Tensor::zeros(model.pred_trans.b.dims);
    model.pred_rot.w = Tensor::zeros(model.pred_rot.w.dims);
    model.pred_rot.b = Tensor::zeros(model.pred_rot.b.dims);
    Tensor y = model.predict_output(Tensor::vec({1, 2, 3, 4}));
    CHECK(y.size() == 6);
    CHECK(y.max_abs() == 0.0);
  }
  SUBCASE("identity-block predictor echoes the latent mean") {
    ModelConfig mc6 = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
    mc6.d = 6;
    mc6.modality_feat_dims = {6};
    NeuralKalmanModel m6 = make_model(mc6);
    m6.pred_trans.w = Tensor::zeros({3, 6});
    m6.pred_rot.w = Tensor::zeros({3, 6});
    for (int i = 0; i < 3; ++i) {
      m6.pred_trans.w(i, i) = 1.0;
      m6.pred_rot.w(i, i + 3) = 1.0;
    }
    m6.pred_trans.b = Tensor::zeros({3});
    m6.pred_rot.b = Tensor::zeros({3});
    Tensor z = Tensor::vec({1, 2, 3, 4, 5, 6});
    CHECK(m6.predict_output(z).v == z.v);
  }
  SUBCASE("predictor gradients pass grad_check at 1e-4") {
    RngStream rng(41);
    DenseLayer t_head = make_dense(4, 3, Activation::kNone, rng);
    DenseLayer r_head = make_dense(4, 3, Activation::kNone, rng);
    Tensor z = sample_gaussian({4}, 0.0, 1.0, rng);
    auto fn = [&](const std::vector<Tensor>& p) {
      DenseLayer th = t_head, rh = r_head;
      th.w = p[0];
      th.b = p[1];
      rh.w = p[2];
      rh.b = p[3];
      return sum(square(concat(th.forward(z), rh.forward(z))));
    };
    auto rep = grad_check(fn,
                          {{"t.w", t_head.w}, {"t.b", t_head.b}, {"r.w", r_head.w},
                           {"r.b", r_head.b}},
                          1e-6, 1e-4);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  }
}

TEST_CASE("sequence_loss examples") {
  SUBCASE("perfect predictions give zero loss") {
    std::vector<Tensor> gt = {Tensor::vec({1, 2, 3, 0, 0, 0})};
    Tensor l = sequence_loss(gt, gt, gt);
    CHECK(l.item() == 0.0);
  }
  SUBCASE("T=1 arithmetic") {
    std::vector<Tensor> gt = {Tensor::vec({1, 0, 0, 0, 0, 0})};
    std::vector<Tensor> zero = {Tensor::zeros({6})};
    Tensor l = sequence_loss(gt, zero, zero);
    CHECK(l.item() == doctest::Approx(2.0));
  }
  SUBCASE("length mismatch throws") {
    std::vector<Tensor> gt = {Tensor::zeros({6}), Tensor::zeros({6})};
    std::vector<Tensor> one = {Tensor::zeros({6})};
    CHECK_THROWS_AS(sequence_loss(gt, one, one), FilterError);
  }
  SUBCASE("loss gradients reach encoder, transition, and predictor in one step") {
    ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
    NeuralKalmanModel model = make_model(mc);
    auto steps = synth_steps(3, 6, 79);
    Tape tape;
    TapeScope scope(tape);
    model.bind(tape);
    SampleContext ctx;
    SequenceRun run = filter_sequence(model, steps, ctx);
    std::vector<Tensor> gt(3, Tensor::vec({0.1, 0.2, 0.3, 0, 0, 0.05}));
    std::vector<Tensor> posts, priors;
    for (auto& s : run.steps) {
      posts.push_back(s.y_post);
      priors.push_back(s.y_prior.size() ? s.y_prior : Tensor::zeros({6}));
    }
    std::vector<bool> mask = {false, true, true};
    Tensor loss = sequence_loss(gt, posts, priors, &mask);
    Gradients g = tape.backward(loss);
    for (const auto& p : model.params()) {
      CAPTURE(p.name);
      CHECK(g.reached(p.t->node));
      CHECK(g.at(*p.t).max_abs() > 0.0);
    }
  }
}

TEST_CASE("covariance hygiene over long runs") {
  SUBCASE("diagonal P stays nonnegative for 1000 random steps") {
    RngStream rng(51);
    LatentBelief b = diag_belief({0, 0, 0}, {1, 1, 1});
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> a(3), q(3), obs(3), r(3);
      for (int i = 0; i < 3; ++i) {
        a[static_cast<size_t>(i)] = 2.0 * rng.uniform01() - 1.0;
        q[static_cast<size_t>(i)] = 0.001 + rng.uniform01();
        obs[static_cast<size_t>(i)] = rng.normal();
        r[static_cast<size_t>(i)] = 0.001 + rng.uniform01();
      }
      b = predict(b, diag_packet(std::move(a), std::move(q)));
      auto [post, rec] = update(b, obs_packet(std::move(obs), std::move(r)),
                                emission_identity(3));
      b = post;
      for (double p : b.p.v) CHECK(p >= 0.0);
    }
  }
  SUBCASE("full P stays symmetric PSD for 1000 random steps") {
    RngStream rng(52);
    LatentBelief b;
    b.z = Tensor::zeros({3});
    b.p = Tensor::identity(3);
    double worst_asym = 0.0, worst_eig = 0.0;
    for (int t = 0; t < 1000; ++t) {
      TransitionPacket pkt;
      pkt.a = sample_gaussian({3, 3}, 0.0, 0.5, rng);
      pkt.q_diag = Tensor::full({3}, 0.01);
      b = predict(b, pkt);
      std::vector<double> obs(3), r(3);
      for (int i = 0; i < 3; ++i) {
        obs[static_cast<size_t>(i)] = rng.normal();
        r[static_cast<size_t>(i)] = 0.01 + rng.uniform01();
      }
      auto [post, rec] = update(b, obs_packet(std::move(obs), std::move(r)),
                                emission_leading(3, 3));
      b = post;
      Eigen::Matrix3d pm;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) pm(i, j) = b.p(i, j);
      }
      worst_asym = std::max(worst_asym, (pm - pm.transpose()).cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(pm);
      worst_eig = std::min(worst_eig, es.eigenvalues().minCoeff());
    }
    CHECK(worst_asym < 1e-10);
    CHECK(worst_eig >= -1e-10);
  }
}

TEST_CASE("Kalman gain norm never grows when R is scaled up") {
  RngStream rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 3;
    std::vector<double> p(static_cast<size_t>(d)), r(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
      p[static_cast<size_t>(i)] = 0.01 + rng.uniform01();
      r[static_cast<size_t>(i)] = 0.01 + rng.uniform01();
    }
    LatentBelief prior = diag_belief({0, 0, 0}, std::vector<double>(p));
    std::vector<double> obs = {1.0, -1.0, 0.5};
    auto [post1, rec1] = update(prior, obs_packet(std::vector<double>(obs), std::vector<double>(r)),
                                emission_identity(d));
    const double c = 1.0 + 10.0 * rng.uniform01();
    std::vector<double> r_scaled(r);
    for (double& x : r_scaled) x *= c;
    LatentBelief prior2 = diag_belief({0, 0, 0}, std::move(p));
    auto [post2, rec2] = update(prior2, obs_packet(std::vector<double>(obs), std::move(r_scaled)),
                                emission_identity(d));
    CHECK(rec2.k_frobenius <= rec1.k_frobenius + 1e-15);
  }
}

TEST_CASE("trace jsonl has the documented fields") {
  ModelConfig mc = tiny_config(TransitionKind::kDeterministic, MatrixLayout::kDiagonal);
  NeuralKalmanModel model = make_model(mc);
  auto steps = synth_steps(3, 6, 90);
  SampleContext ctx;
  SequenceRun run = filter_sequence(model, steps, ctx);
  std::istringstream lines(trace_jsonl(run));
  std::string line;
  int t = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("t") == t++);
    for (const char* key : {"z", "diagP", "r", "S", "K_frobenius", "y_prior", "y_posterior"}) {
      CHECK(j.contains(key));
    }
  }
  CHECK(t == 3);
}

// the oracle itself: scalar textbook identities
TEST_CASE("reference KF scalar behavior") {
  SUBCASE("one update from p0=1 with r=1 halves the variance") {
    oracles::ReferenceKf ref;
    ref.a = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ref.h = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ref.q = Eigen::MatrixXd::Zero(1, 1);
    ref.r = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ref.z = Eigen::VectorXd::Zero(1);
    ref.p = Eigen::MatrixXd::Constant(1, 1, 1.0);
    auto log = ref.run({Eigen::VectorXd::Constant(1, 2.0)});
    CHECK(log.back().p(0, 0) == doctest::Approx(0.5));
    CHECK(log.back().z(0) == doctest::Approx(1.0));
  }
  SUBCASE("steady-state covariance solves the scalar Riccati equation") {
    // a=1, h=1: p' = p + q, p_next = p' r / (p' + r); fixed point satisfies
    // p^2 + q p - q r = 0, so p* = (-q + sqrt(q^2 + 4 q r)) / 2
    const double q = 0.01, r = 1.0;
    oracles::ReferenceKf ref;
    ref.a = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ref.h = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ref.q = Eigen::MatrixXd::Constant(1, 1, q);
    ref.r = Eigen::MatrixXd::Constant(1, 1, r);
    ref.z = Eigen::VectorXd::Zero(1);
    ref.p = Eigen::MatrixXd::Constant(1, 1, 1.0);
    double p = 0.0, k = 0.0;
    for (int t = 0; t < 2000; ++t) {
      auto log = ref.run({Eigen::VectorXd::Constant(1, 0.0)});
      p = log.back().p(0, 0);
      k = log.back().k(0, 0);
    }
    const double p_star = (-q + std::sqrt(q * q + 4.0 * q * r)) / 2.0;
    CHECK(p == doctest::Approx(p_star).epsilon(1e-9));
    CHECK(k == doctest::Approx((p_star + q) / (p_star + q + r)).epsilon(1e-9));
  }
}

TEST_CASE("filter_sequence consumes pendulum controls through the transition") {
  ModelConfig mc;
  mc.d = 3;
  mc.modality_obs_dims = {10};
  mc.modality_feat_dims = {2};
  mc.encoder_hidden = 6;
  mc.transition_hidden = 6;
  mc.kind = TransitionKind::kDirichlet;
  mc.layout = MatrixLayout::kDiagonal;
  mc.control_dim = 1;
  mc.init_seed = 61;
  NeuralKalmanModel model = make_model(mc);

  SystemSpec spec;
  spec.kind = SystemKind::kPendulum;
  spec.latent_dim = 3;
  spec.obs_dim = 10;
  spec.modality_obs_dims = {10};
  RngStream rng(61);
  Episode ep = gen_pendulum(spec, 6, [](int t, double, double) { return 0.3 * t; }, rng);
  auto steps = episode_inputs(ep, {10});
  RngStream sampler(62);
  SampleContext ctx;
  ctx.rng = &sampler;
  SequenceRun run = filter_sequence(model, steps, ctx);
  CHECK(run.steps.size() == 6);
  // H = [I_2, 0] lifts two observed features into a 3-state latent: the
  // third coordinate stays at its prior through every update
  for (size_t t = 1; t < run.steps.size(); ++t) {
    CHECK(run.steps[t].posterior.z.v[2] == run.steps[t].prior.z.v[2]);
  }
  // a missing control is an error when the model declares control_dim 1
  std::vector<StepInput> no_control = steps;
  for (auto& s : no_control) s.control = Tensor();
  CHECK_THROWS_AS(filter_sequence(model, no_control, ctx), TransitionError);
}
