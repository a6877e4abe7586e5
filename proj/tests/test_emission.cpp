#include "doctest.h"

#include <cmath>

#include "dynakf/emission.hpp"
#include "test_support.hpp"

using namespace dynakf;

namespace {

Encoder zero_encoder(int in, int hidden, int feat) {
  Encoder enc;
  DenseLayer trunk;
  trunk.w = Tensor::zeros({hidden, in});
  trunk.b = Tensor::zeros({hidden});
  trunk.act = Activation::kRelu;
  enc.trunk.layers.push_back(trunk);
  enc.head_a.w = Tensor::zeros({feat, hidden});
  enc.head_a.b = Tensor::zeros({feat});
  enc.head_r.w = Tensor::zeros({feat, hidden});
  enc.head_r.b = Tensor::zeros({feat});
  return enc;
}

}  // namespace

TEST_CASE("encode floors features and noise at eps0") {
  SUBCASE("zero-weight encoder emits the floor") {
    Encoder enc = zero_encoder(4, 3, 2);
    ObservationPacket pkt = enc.encode(Tensor::vec({1, 2, 3, 4}));
    for (double a : pkt.a.v) CHECK(a == 1e-4);
    for (double r : pkt.r_diag.v) CHECK(r == 1e-4);
  }
  SUBCASE("positivity holds over 1e4 random inputs") {
    RngStream rng(4);
    Encoder enc = make_encoder(6, 8, 3, rng);
    for (int i = 0; i < 10000; ++i) {
      Tensor x = sample_gaussian({6}, 0.0, 2.0, rng);
      ObservationPacket pkt = enc.encode(x);
      double mn_a = 1e9, mn_r = 1e9;
      for (double a : pkt.a.v) mn_a = std::min(mn_a, a);
      for (double r : pkt.r_diag.v) mn_r = std::min(mn_r, r);
      CHECK(mn_a >= 1e-4);
      CHECK(mn_r >= 1e-4);
    }
  }
  SUBCASE("encode gradients pass grad_check at 1e-4") {
    RngStream rng(5);
    Encoder enc = make_encoder(4, 6, 3, rng);
    Tensor x = sample_gaussian({4}, 0.0, 1.0, rng);
    std::vector<std::pair<std::string, Tensor>> params;
    ParamList list;
    enc.collect(list, "enc");
    for (const auto& p : list) params.emplace_back(p.name, p.t->detached());
    auto fn = [&](const std::vector<Tensor>& p) {
      Encoder e = enc;
      ParamList inner;
      e.collect(inner, "enc");
      for (size_t i = 0; i < inner.size(); ++i) *inner[i].t = p[i];
      ObservationPacket pkt = e.encode(x);
      return add(sum(pkt.a), sum(pkt.r_diag));
    };
    auto rep = grad_check(fn, params, 1e-6, 1e-4);
    CHECK_MESSAGE(rep.all_pass, rep.summary());
  }
  SUBCASE("shape mismatch throws") {
    RngStream rng(6);
    Encoder enc = make_encoder(4, 6, 3, rng);
    CHECK_THROWS_AS(enc.encode(Tensor::vec({1, 2})), ShapeError);
  }
}

TEST_CASE("fuse concatenates packets in declared order") {
  RngStream rng(7);
  Encoder ev = make_encoder(8, 8, 64 / 8, rng);  // stands in for a 64-dim head
  SUBCASE("64 + 64 features fuse to 128") {
    ObservationPacket v, i;
    v.a = Tensor::full({64}, 0.5);
    v.r_diag = Tensor::full({64}, 0.1);
    v.block_dims = {64};
    v.present = {true};
    i.a = Tensor::full({64}, 0.25);
    i.r_diag = Tensor::full({64}, 0.2);
    i.block_dims = {64};
    i.present = {true};
    ObservationPacket fused = fuse({v, i});
    CHECK(fused.a.size() == 128);
    CHECK(fused.r_diag.size() == 128);
    CHECK(fused.a.v[0] == 0.5);
    CHECK(fused.a.v[64] == 0.25);
    CHECK(fused.present == std::vector<bool>{true, true});
  }
  SUBCASE("fusing one packet is the identity") {
    ObservationPacket p;
    p.a = Tensor::vec({1, 2, 3});
    p.r_diag = Tensor::vec({4, 5, 6});
    p.block_dims = {3};
    p.present = {true};
    ObservationPacket fused = fuse({p});
    CHECK(fused.a.v == p.a.v);
    CHECK(fused.r_diag.v == p.r_diag.v);
  }
  SUBCASE("absent second block keeps only the first, mask records it") {
    ObservationPacket p, absent;
    p.a = Tensor::vec({1, 2});
    p.r_diag = Tensor::vec({3, 4});
    p.block_dims = {2};
    p.present = {true};
    absent.block_dims = {5};
    absent.present = {false};
    ObservationPacket fused = fuse({p, absent});
    CHECK(fused.a.size() == 2);
    CHECK(fused.present == std::vector<bool>{true, false});
    CHECK(fused.block_dims == std::vector<int>{2, 5});
  }
  SUBCASE("empty list throws") {
    CHECK_THROWS_AS(fuse({}), EmissionError);
  }
  SUBCASE("fusion is associative over call grouping") {
    auto mk = [](double val, int n) {
      ObservationPacket p;
      p.a = Tensor::full({n}, val);
      p.r_diag = Tensor::full({n}, val * 2);
      p.block_dims = {n};
      p.present = {true};
      return p;
    };
    ObservationPacket a = mk(1, 2), b = mk(2, 3), c = mk(3, 1);
    ObservationPacket left = fuse({fuse({a, b}), c});
    ObservationPacket right = fuse({a, fuse({b, c})});
    ObservationPacket flat = fuse({a, b, c});
    CHECK(left.a.v == flat.a.v);
    CHECK(right.a.v == flat.a.v);
    CHECK(left.r_diag.v == flat.r_diag.v);
    CHECK(left.block_dims == flat.block_dims);
  }
}

TEST_CASE("emission matrix construction") {
  SUBCASE("identity mode") {
    EmissionMatrix h = emission_identity(4);
    Tensor m = h.realized();
    CHECK(m.dims == std::vector<int>{4, 4});
    CHECK(testsup::max_abs_diff(m, Tensor::identity(4)) == 0.0);
  }
  SUBCASE("leading-m, m=2, d=3") {
    EmissionMatrix h = emission_leading(2, 3);
    Tensor m = h.realized();
    CHECK(m.v == std::vector<double>{1, 0, 0, 0, 1, 0});
  }
  SUBCASE("block-select second block of (64,64)") {
    EmissionMatrix h = emission_block(1, {64, 64});
    CHECK(h.m == 64);
    CHECK(h.d == 128);
    CHECK(h.offset == 64);
    Tensor m = h.realized();
    CHECK(m(0, 64) == 1.0);
    CHECK(m(0, 0) == 0.0);
    CHECK(m(63, 127) == 1.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(emission_leading(4, 3), EmissionError);
    CHECK_THROWS_AS(emission_block(2, {4, 4}), EmissionError);
    CHECK_THROWS_AS(emission_block(0, {0, 4}), EmissionError);
  }
  SUBCASE("H H^T is the m-dim identity for every mode") {
    std::vector<EmissionMatrix> all = {emission_identity(5), emission_leading(2, 6),
                                       emission_block(1, {3, 4}), emission_block(0, {2, 7})};
    for (const auto& h : all) {
      Tensor m = h.realized();
      Tensor prod = matmul(m, transpose(m));
      CHECK(testsup::max_abs_diff(prod, Tensor::identity(h.m)) == 0.0);
    }
  }
  SUBCASE("select and lift agree with the realized matrix") {
    RngStream rng(9);
    EmissionMatrix h = emission_block(1, {2, 3});
    Tensor z = sample_gaussian({5}, 0.0, 1.0, rng);
    Tensor a = sample_gaussian({3}, 0.0, 1.0, rng);
    CHECK(testsup::max_abs_diff(h.select(z), matmul(h.realized(), z)) == 0.0);
    CHECK(testsup::max_abs_diff(h.lift(a), matmul(transpose(h.realized()), a)) == 0.0);
  }
}
