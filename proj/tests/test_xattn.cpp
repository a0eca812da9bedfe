// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "avse/error.hpp"
#include "avse/ops.hpp"
#include "avse/xattn.hpp"
#include "gradcheck.hpp"

using namespace avse;

namespace {

AttentionState<double> state(std::size_t d_a, std::size_t d_v, std::size_t h, std::uint64_t seed) {
  Rng r(seed);
  AttentionConfig c;
  c.d_a = d_a;
  c.d_v = d_v;
  c.heads = h;
  auto s = AttentionState<double>::init(c, r);
  // Nonzero output projection so the block is exercised end to end.
  for (auto& v : s.w_out.mutable_data()) v = r.uniform(-0.3, 0.3);
  return s;
}

Tensor<double> rnd(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng r(seed);
  return Tensor<double>::randn(std::move(s), r, sd);
}

void fill(Tensor<double>& t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

}  // namespace

TEST_SUITE("xattn") {

TEST_CASE("config validation") {
  AttentionConfig c;
  c.d_a = 30;
  c.heads = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(AttentionConfig::from(ModelConfig::paper()).head_dim() == 32);
  CHECK(AttentionConfig::from(ModelConfig::tiny()).heads == 2);
}

TEST_CASE("projections") {
  auto s = state(4, 3, 1, 1);
  fill(s.w_q, 0.0);
  for (std::size_t i = 0; i < 4; ++i) s.w_q.mutable_data()[i * 4 + i] = 1.0;
  auto x = rnd({2, 5, 4}, 2);
  auto qkv = project_qkv(x, s);
  REQUIRE(qkv.q.shape() == Shape{2, 1, 5, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(qkv.q.data()[i] == x.data()[i]);

  auto s2 = state(8, 3, 2, 3);
  auto z = project_qkv(Tensor<double>({1, 6, 8}), s2);
  for (auto* t : {&z.q, &z.k, &z.v})
    for (double v : t->data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(project_qkv(Tensor<double>({1, 6, 7}), s2), DimensionError);

  auto y = rnd({3, 7, 8}, 4);
  auto back = merge_heads(split_heads(y, 4));
  REQUIRE(back.shape() == y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(back.data()[i] == y.data()[i]);
}

TEST_CASE("visual bias projection") {
  auto s = state(8, 3, 2, 5);
  auto zero = project_visual_bias(Tensor<double>({2, 6, 3}), s, 6);
  REQUIRE(zero.shape() == Shape{2, 2, 6});
  for (double v : zero.data()) CHECK(v == 0.0);

  auto xv = rnd({2, 6, 3}, 6);
  auto s0 = s;
  s0.w_vis = Tensor<double>({3, 2});
  const auto none = project_visual_bias(xv, s0, 6);
  for (double v : none.data()) CHECK(v == 0.0);

  auto sp = s;
  sp.w_vis = Tensor<double>::full({3, 2}, 0.5);
  Tensor<double> onehot({1, 6, 3});
  onehot.mutable_data()[4 * 3 + 1] = 1.0;
  auto b = project_visual_bias(onehot, sp, 6);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t t = 0; t < 6; ++t)
      if (t != 4) CHECK(b.data()[h * 6 + t] < b.data()[h * 6 + 4]);

  CHECK_THROWS_AS(project_visual_bias(xv, s, 7), AlignmentError);
}

TEST_CASE("attention rows sum to one") {
  auto s = state(8, 4, 2, 7);
  auto qkv = project_qkv(rnd({2, 9, 8}, 8, 3.0), s);
  auto bias = project_visual_bias(rnd({2, 9, 4}, 9), s, 9);
  auto a = attention_weights(qkv.q, qkv.k, &bias);
  REQUIRE(a.shape() == Shape{2, 2, 9, 9});
  for (std::size_t row = 0; row < 2 * 2 * 9; ++row) {
    double total = 0;
    for (std::size_t k = 0; k < 9; ++k) total += a.data()[row * 9 + k];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("zero bias equals plain self-attention bit for bit") {
  auto s = state(8, 4, 2, 10);
  auto qkv = project_qkv(rnd({2, 6, 8}, 11), s);
  Tensor<double> zero({2, 2, 6});
  auto with = attend(qkv, &zero, s);
  auto without = attend(qkv, nullptr, s);
  for (std::size_t i = 0; i < with.numel(); ++i) CHECK(with.data()[i] == without.data()[i]);
  auto aw = attention_weights(qkv.q, qkv.k, &zero);
  auto an = attention_weights(qkv.q, qkv.k, nullptr);
  for (std::size_t i = 0; i < aw.numel(); ++i) CHECK(aw.data()[i] == an.data()[i]);
}

TEST_CASE("constant keys give uniform rows") {
  auto q = rnd({1, 2, 5, 4}, 12);
  auto k = Tensor<double>::full({1, 2, 5, 4}, 0.7);
  Tensor<double> zero({1, 2, 5});
  auto a = attention_weights(q, k, &zero);
  for (double v : a.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("one-frame bias concentrates attention") {
  for (std::size_t T = 2; T <= 8; ++T) {
    auto q = rnd({1, 2, T, 4}, 13 + T, 0.5), k = rnd({1, 2, T, 4}, 23 + T, 0.5);
    auto s = attention_scores(q, k);
    double smax = 0;
    for (double v : s.data()) smax = std::max(smax, std::abs(v));
    REQUIRE(smax < 2.0);  // bounded scores
    const std::size_t star = T / 2;
    Tensor<double> bias({1, 2, T});
    bias.mutable_data()[star] = 20.0;
    bias.mutable_data()[T + star] = 20.0;
    auto a = attention_weights(q, k, &bias);
    for (std::size_t row = 0; row < 2 * T; ++row) CHECK(a.data()[row * T + star] >= 0.99);
  }
}

TEST_CASE("bias shift invariance and score scaling") {
  auto q = rnd({2, 2, 6, 4}, 30), k = rnd({2, 2, 6, 4}, 31);
  auto b = rnd({2, 2, 6}, 32);
  auto shifted = b.detach();
  for (auto& v : shifted.mutable_data()) v += 3.25;
  auto a1 = attention_weights(q, k, &b), a2 = attention_weights(q, k, &shifted);
  for (std::size_t i = 0; i < a1.numel(); ++i) CHECK(std::abs(a1.data()[i] - a2.data()[i]) <= 1e-15);

  auto s_default = attention_scores(q, k);
  auto s_one = attention_scores(q, k, 1.0);
  for (std::size_t i = 0; i < s_one.numel(); ++i) CHECK(s_one.data()[i] == doctest::Approx(2.0 * s_default.data()[i]).epsilon(1e-14));
}

TEST_CASE("non-finite scores are reported") {
  auto s = state(4, 2, 1, 40);
  auto q = rnd({1, 1, 3, 4}, 41);
  q.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  Qkv<double> qkv{q, rnd({1, 1, 3, 4}, 42), rnd({1, 1, 3, 4}, 43)};
  CHECK_THROWS_AS(attend(qkv, nullptr, s), NumericError);
  CHECK_THROWS_AS(attention_weights(qkv.q, qkv.k, nullptr), NumericError);
}

TEST_CASE("full block gradient, tiny widths") {
  auto s = state(32, 32, 2, 50);
  auto xa = rnd({2, 6, 32}, 51, 0.5), xv = rnd({2, 6, 32}, 52);
  auto rep = testing::check_gradients(
      [&] { return testing::probe_loss(cross_attention(xa, xv, s)); },
      {{"x_a", xa}, {"x_v", xv}, {"w_q", s.w_q}, {"w_k", s.w_k}, {"w_v", s.w_v}, {"w_vis", s.w_vis}, {"w_out", s.w_out}},
      64);
  INFO("worst " << rep.worst << " rel " << rep.max_rel);
  CHECK(rep.max_rel <= 1e-4);
  CHECK(cross_attention(xa, xv, s).shape() == Shape{2, 6, 32});
  CHECK_THROWS_AS(cross_attention(xa, rnd({2, 5, 32}, 53), s), AlignmentError);
}

}  // TEST_SUITE
