// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "avse/error.hpp"
#include "avse/model.hpp"
#include "avse/ops.hpp"
#include "avse/separator.hpp"
#include "avse/synth.hpp"
#include "gradcheck.hpp"

using namespace avse;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng r(seed);
  return Tensor<double>::randn(std::move(s), r, sd);
}

void zero(Tensor<double>& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = r.normal();
  return v;
}

// Tone pair plus white noise at 0 dB.
struct Mixture {
  std::vector<double> clean, noise, noisy;
};

Mixture tone_mixture(std::size_t n, std::uint64_t seed) {
  Mixture m;
  m.clean.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    m.clean[i] = std::sin(2 * std::numbers::pi * 440.0 * i / kSampleRate) +
                 0.5 * std::sin(2 * std::numbers::pi * 1320.0 * i / kSampleRate);
  m.noise = scale_to_snr(m.clean, noise(n, seed), 0.0);
  m.noisy.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.noisy[i] = m.clean[i] + m.noise[i];
  return m;
}

}  // namespace

TEST_SUITE("separator") {

TEST_CASE("zero-weight block is the identity") {
  Rng r(1);
  auto b = DualPathBlock<double>::init(8, r);
  b.intra = GruParams<double>::zeros(8, 8);
  b.inter = GruParams<double>::zeros(8, 8);
  auto x = rnd({2, 3, 5, 8}, 2);
  auto y = b.forward(x, {});
  REQUIRE(y.shape() == x.shape());
  double dev = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) dev = std::max(dev, std::abs(y.data()[i] - x.data()[i]));
  CHECK(dev <= 1e-6);
}

TEST_CASE("block shape and gradient") {
  Rng r(3);
  auto b = DualPathBlock<double>::init(32, r);
  for (auto* g : {&b.intra_gamma, &b.inter_gamma, &b.intra_beta, &b.inter_beta})
    for (auto& v : g->mutable_data()) v = r.uniform(0.5, 1.5);
  auto x = rnd({1, 3, 4, 32}, 4);
  CHECK(b.forward(x, {}).shape() == x.shape());
  auto loss = [&] {
    Rng dr(77);  // same dropout mask on every evaluation
    return testing::probe_loss(b.forward(x, ForwardMode{true, 0.3, &dr}));
  };
  auto rep = testing::check_gradients(loss,
                                      {{"x", x},
                                       {"intra.w_ih", b.intra.w_ih},
                                       {"intra.w_hh", b.intra.w_hh},
                                       {"intra.b_ih", b.intra.b_ih},
                                       {"intra.b_hh", b.intra.b_hh},
                                       {"inter.w_ih", b.inter.w_ih},
                                       {"inter.w_hh", b.inter.w_hh},
                                       {"intra_gamma", b.intra_gamma},
                                       {"intra_beta", b.intra_beta},
                                       {"inter_gamma", b.inter_gamma},
                                       {"inter_beta", b.inter_beta}},
                                      48);
  INFO("worst " << rep.worst << " rel " << rep.max_rel);
  CHECK(rep.max_rel <= 1e-4);
}

TEST_CASE("separator shapes and nonnegativity") {
  Rng r(5);
  auto tiny = Separator<double>::init(ModelConfig::tiny(), r);
  CHECK(tiny.blocks.size() == 2);
  auto y = tiny.forward(rnd({2, 32, 150}, 6), {});
  REQUIRE(y.shape() == Shape{2, 16, 150});
  for (double v : y.data()) CHECK(v >= 0.0);

  // Bias-free weights map silence to silence.
  for (auto& b : tiny.blocks)
    for (auto* t : {&b.intra.b_ih, &b.intra.b_hh, &b.inter.b_ih, &b.inter.b_hh}) zero(*t);
  const auto silent = tiny.forward(Tensor<double>({1, 32, 70}), {});
  for (double v : silent.data()) CHECK(v == 0.0);
}

TEST_CASE("separator shape trace, paper preset") {
  Rng r(7);
  auto sep = Separator<float>::init(ModelConfig::paper(), r);
  CHECK(sep.blocks.size() == 6);
  CHECK(sep.proj.shape() == Shape{256, 128});
  NoGradGuard ng;
  auto y = sep.forward(Tensor<float>::randn({1, 256, 1999}, r, 0.1), {});
  CHECK(y.shape() == Shape{1, 128, 1999});
}

TEST_CASE("decoder length restoration and adjointness") {
  auto cfg = ModelConfig::tiny();
  Rng r(8);
  auto dec = Decoder<double>::init(cfg, r);
  CHECK(dec.forward(rnd({2, 16, 1999}, 9), 16000).shape() == Shape{2, 16000});
  CHECK(dec.forward(rnd({1, 16, 49}, 10), 400).shape() == Shape{1, 400});
  const auto quiet = dec.forward(Tensor<double>({1, 16, 30}), 247);
  for (double v : quiet.data()) CHECK(v == 0.0);
  // Decoder is the transpose of an encoder-shaped conv with the same plan.
  auto x = rnd({1, 1, 400}, 11);
  auto y = rnd({1, 16, 49}, 12);
  auto fwd = conv1d(x, dec.weight, 8);
  REQUIRE(fwd.shape() == y.shape());
  auto back = dec.forward(y, 400);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < fwd.numel(); ++i) lhs += fwd.data()[i] * y.data()[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * back.data()[i];
  CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(lhs));
}

TEST_CASE("mask estimation") {
  StftParams p;
  auto m = tone_mixture(8000, 13);
  Waveform noisy{m.noisy}, clean{m.clean}, silent{std::vector<double>(8000, 0.0)};
  auto same = estimate_mask(noisy, noisy, p);
  for (double v : same.soft.values) CHECK(v == 1.0);
  for (auto v : same.binary.values) CHECK(v == 1);
  auto none = estimate_mask(silent, noisy, p);
  for (auto v : none.binary.values) CHECK(v == 0);
  CHECK_THROWS_AS(estimate_mask(Waveform{std::vector<double>(7999, 0.0)}, noisy, p), DimensionError);

  auto est = estimate_mask(clean, noisy, p);
  auto ref = ibm(stft_padded(m.clean, p), stft_padded(m.noise, p));
  auto cs = stft_padded(m.clean, p), ns = stft_padded(m.noise, p);
  std::size_t agree = 0, counted = 0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    if (std::abs(cs.values[i]) == std::abs(ns.values[i])) continue;
    ++counted;
    agree += est.binary.values[i] == ref.values[i];
    CHECK(est.soft.values[i] >= 0.0);
    CHECK(est.soft.values[i] <= 1.0);
    CHECK(est.binary.values[i] == (est.soft.values[i] > 0.5 ? 1 : 0));
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(counted);
  MESSAGE("mask agreement " << rate);
  CHECK(rate >= 0.99);
}

TEST_CASE("reconstruction") {
  StftParams p;
  auto m = tone_mixture(16000, 14);
  Waveform noisy{m.noisy};
  auto ones = estimate_mask(noisy, noisy, p);
  for (auto mode : {MaskMode::kSoft, MaskMode::kBinary}) {
    auto y = reconstruct(noisy, ones, p, mode);
    REQUIRE(y.size() == noisy.size());
    double d = 0, s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      d += std::pow(y.samples[i] - noisy.samples[i], 2);
      s += std::pow(noisy.samples[i], 2);
    }
    CHECK(std::sqrt(d / s) <= 1e-10);
  }
  CHECK_THROWS_AS(reconstruct(noisy, ones, p, MaskMode::kOff), UsageError);

  EstimatedMask oracle;
  oracle.binary = ibm(stft_padded(m.clean, p), stft_padded(m.noise, p));
  oracle.soft = RealMask::from_binary(oracle.binary);
  auto enh = reconstruct(noisy, oracle, p, MaskMode::kBinary);
  CHECK(si_sdr(m.clean, enh.samples) - si_sdr(m.clean, m.noisy) >= 5.0);

  // Soft and binary outputs differ only through bins with soft in (0, 1).
  auto est = estimate_mask(Waveform{m.clean}, noisy, p);
  auto a = apply_mask(stft_padded(m.noisy, p), est.soft);
  auto b = apply_mask(stft_padded(m.noisy, p), RealMask::from_binary(est.binary));
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double s = est.soft.values[i];
    if (s == 0.0 || s == 1.0) CHECK(a.values[i] == b.values[i]);
  }
}

TEST_CASE("mask mode names") {
  CHECK(parse_mask_mode("soft") == MaskMode::kSoft);
  CHECK(parse_mask_mode("binary") == MaskMode::kBinary);
  CHECK(parse_mask_mode("off") == MaskMode::kOff);
  CHECK(to_string(MaskMode::kBinary) == "binary");
  CHECK_THROWS_AS(parse_mask_mode("hard"), ConfigError);
}

TEST_CASE("model shape plan") {
  auto cfg = ModelConfig::tiny();
  auto m = AvseModel<float>::init(cfg, 1);
  Rng r(15);
  auto out = m.forward(Tensor<float>::randn({2, 4000}, r, 0.1), Tensor<float>::randn({2, 7, 32}, r));
  CHECK(out.shape() == Shape{2, 4000});
  // Untrained output already tracks the input (near-identity start).
  SynthSpec spec;
  spec.duration_s = 1.0;
  auto item = synth_item(spec, 0);
  auto res = m.enhance(item.noisy, item.visual, MaskMode::kOff);
  CHECK(res.raw.size() == item.noisy.size());
  CHECK(si_sdr(item.noisy.samples, res.raw.samples) > 0.0);
}

TEST_CASE("end-to-end gradient, tiny preset") {
  auto m = AvseModel<double>::init(ModelConfig::tiny(), 3);
  Rng r(16);
  // Wake up the zero-started residual branches so every path carries signal.
  for (auto& p : m.trainable_parameters()) {
    if (p.name.find("gamma") != std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = r.uniform(0.3, 1.0);
    if (p.name.find("w_out") != std::string::npos)
      for (auto& v : p.tensor.mutable_data()) v = r.uniform(-0.2, 0.2);
  }
  auto wave = rnd({2, 400}, 17, 0.3), clean = rnd({2, 400}, 18, 0.3);
  for (std::size_t i = 0; i < wave.numel(); ++i) wave.mutable_data()[i] += clean.data()[i];
  auto vis = rnd({2, 3, 32}, 19);
  std::vector<testing::GradLeaf> leaves;
  for (auto& p : m.trainable_parameters()) leaves.push_back({p.name, p.tensor});
  auto rep = testing::check_gradients(
      [&] {
        Rng dr(5);
        return si_sdr_loss(clean, m.forward(wave, vis, ForwardMode{true, 0.3, &dr}));
      },
      leaves, 16);
  INFO("worst " << rep.worst << " rel " << rep.max_rel);
  CHECK(rep.max_rel <= 1e-4);
}

}  // TEST_SUITE
