// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <limits>
#include <numbers>

#include "avse/dsp.hpp"
#include "avse/error.hpp"
#include "avse/synth.hpp"
#include "avse/wav.hpp"
#include "gradcheck.hpp"

using namespace avse;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = sd * r.normal();
  return v;
}

std::vector<double> tone(std::size_t n, double hz, double amp = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = amp * std::sin(2 * std::numbers::pi * hz * i / kSampleRate);
  return v;
}

double rel_err(std::span<const double> a, std::span<const double> b) {
  double d = 0, s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    s += a[i] * a[i];
  }
  return std::sqrt(d / s);
}

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("window and COLA") {
  StftParams p;
  auto w = make_window(p);
  REQUIRE(w.size() == 512);
  CHECK(w[0] == 0.0);
  CHECK(w[256] == doctest::Approx(1.0));
  CHECK(satisfies_cola(p));
  CHECK(satisfies_cola({512, 128, WindowKind::kHann}));
  CHECK(satisfies_cola({512, 512, WindowKind::kRectangular}));
  CHECK_FALSE(satisfies_cola({512, 200, WindowKind::kHann}));
}

TEST_CASE("stft examples") {
  StftParams p;
  auto s = stft(tone(4096, 1000.0), p);
  CHECK(s.frames == (4096 - 512) / 256 + 1);
  CHECK(s.bins == 257);
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 0; f < s.bins; ++f)
      if (std::abs(s.at(t, f)) > std::abs(s.at(t, best))) best = f;
    CHECK(best == 32);
  }
  auto z = stft(std::vector<double>(2000, 0.0), p);
  for (auto c : z.values) CHECK(c == std::complex<double>(0.0, 0.0));
  CHECK_THROWS_AS(stft(std::vector<double>(511, 0.0), p), SignalTooShortError);
}

TEST_CASE("stft Parseval per frame") {
  StftParams p;
  auto x = noise(3000, 1);
  auto s = stft(x, p);
  auto w = make_window(p);
  for (std::size_t t = 0; t < s.frames; ++t) {
    double et = 0;
    for (std::size_t i = 0; i < 512; ++i) et += std::pow(x[t * 256 + i] * w[i], 2);
    // One-sided spectrum: interior bins count twice.
    double ef = 0;
    for (std::size_t f = 0; f < s.bins; ++f) {
      const double m = std::norm(s.at(t, f));
      ef += (f == 0 || f == s.bins - 1) ? m : 2 * m;
    }
    ef /= 512.0;
    CHECK(std::abs(ef - et) <= 1e-9 * et);
  }
}

TEST_CASE("istft round trip, zero and linearity") {
  StftParams p;
  auto x = noise(16000, 2);
  auto y = istft(stft(x, p));
  auto [lo, hi] = istft_interior(p, y.size());
  REQUIRE(hi > lo);
  CHECK(rel_err(std::span(x).subspan(lo, hi - lo), std::span(y.samples).subspan(lo, hi - lo)) <= 1e-10);

  auto zs = stft(std::vector<double>(4096, 0.0), p);
  for (double v : istft(zs).samples) CHECK(v == 0.0);

  auto s1 = stft(noise(4096, 3), p), s2 = stft(noise(4096, 4), p);
  SpectroGram mix = s1;
  for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = 0.7 * s1.values[i] - 1.3 * s2.values[i];
  auto y1 = istft(s1), y2 = istft(s2), ym = istft(mix);
  double worst = 0, norm = 0;
  for (std::size_t i = 0; i < ym.size(); ++i) {
    worst = std::max(worst, std::abs(ym.samples[i] - (0.7 * y1.samples[i] - 1.3 * y2.samples[i])));
    norm = std::max(norm, std::abs(ym.samples[i]));
  }
  CHECK(worst <= 1e-10 * norm);

  SpectroGram bad = s1;
  bad.params.hop = 200;
  CHECK_THROWS_AS(istft(bad), ConfigError);
}

TEST_CASE("padded analysis reconstructs every sample") {
  StftParams p;
  for (std::size_t n : {100u, 512u, 16000u, 16001u}) {
    auto x = noise(n, 5 + n);
    auto y = istft_trimmed(stft_padded(x, p), n);
    REQUIRE(y.size() == n);
    CHECK(rel_err(x, y.samples) <= 1e-10);
  }
}

TEST_CASE("ibm rule") {
  StftParams p;
  auto clean = stft(noise(2048, 6), p);
  auto zero = stft(std::vector<double>(2048, 0.0), p);
  auto m = ibm(clean, zero);
  for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(m.values[i] == (std::abs(clean.values[i]) > 0 ? 1 : 0));
  for (auto v : ibm(zero, clean).values) CHECK(v == 0);
  for (auto v : ibm(clean, clean).values) CHECK(v == 0);  // ties are 0

  auto nz = stft(noise(2048, 7), p);
  auto base = ibm(clean, nz);
  SpectroGram c2 = clean, n2 = nz;
  for (auto& v : c2.values) v *= 3.5;
  for (auto& v : n2.values) v *= 3.5;
  CHECK(ibm(c2, n2).values == base.values);
  CHECK_THROWS_AS(ibm(clean, stft(noise(4096, 8), p)), DimensionError);
}

TEST_CASE("apply_mask keeps phase and scales magnitude") {
  StftParams p;
  auto s = stft(noise(4096, 9), p);
  RealMask ones{s.frames, s.bins, std::vector<double>(s.values.size(), 1.0)};
  CHECK(apply_mask(s, ones).values == s.values);
  RealMask zeros{s.frames, s.bins, std::vector<double>(s.values.size(), 0.0)};
  for (auto v : apply_mask(s, zeros).values) CHECK(std::abs(v) == 0.0);
  Rng r(10);
  RealMask m{s.frames, s.bins, std::vector<double>(s.values.size())};
  for (auto& v : m.values) v = r.uniform();
  auto out = apply_mask(s, m);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(std::abs(out.values[i]) == doctest::Approx(m.values[i] * std::abs(s.values[i])).epsilon(1e-12));
    if (std::abs(s.values[i]) > 0 && m.values[i] > 0) CHECK(std::arg(out.values[i]) == doctest::Approx(std::arg(s.values[i])).epsilon(1e-12));
  }
  m.values[3] = 1.5;
  CHECK_THROWS_AS(apply_mask(s, m), DomainError);
  m.values[3] = -0.1;
  CHECK_THROWS_AS(apply_mask(s, m), DomainError);
}

TEST_CASE("oracle IBM on 0 dB tone plus noise") {
  StftParams p;
  const std::size_t n = 16000;
  auto c = tone(n, 440.0);
  auto c2 = tone(n, 1320.0, 0.5);
  for (std::size_t i = 0; i < n; ++i) c[i] += c2[i];
  auto nz = scale_to_snr(c, noise(n, 11), 0.0);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = c[i] + nz[i];
  auto mask = ibm(stft_padded(c, p), stft_padded(nz, p));
  auto est = istft_trimmed(apply_mask(stft_padded(y, p), RealMask::from_binary(mask)), n);
  const double gain = si_sdr(c, est.samples) - si_sdr(c, y);
  MESSAGE("oracle gain " << gain << " dB");
  CHECK(gain >= 5.0);
}

TEST_CASE("si_sdr definition") {
  std::vector<double> x{1, 1, 1, 1}, xh{1, 1, 1, 0};
  CHECK(si_sdr(x, xh) == doctest::Approx(10 * std::log10(2.25 / 0.75)).epsilon(1e-12));
  CHECK(std::abs(si_sdr(x, xh) - 4.771) <= 0.001);
  CHECK(si_sdr(x, x) == std::numeric_limits<double>::infinity());
  CHECK(si_sdr_capped(x, x) == kSdrCapDb);
  std::vector<double> twice{2, 2, 2, 2};
  CHECK(si_sdr_capped(x, twice) == si_sdr_capped(x, x));
  auto a = noise(1000, 12), b = noise(1000, 13);
  // Power-of-two factors scale without rounding, so equality is exact;
  // other factors differ only by summation rounding.
  for (double alpha : {0.5, 2.0, 1024.0, 1.0 / 64}) {
    std::vector<double> sb(b);
    for (auto& v : sb) v *= alpha;
    CHECK(si_sdr(a, sb) == si_sdr(a, b));
  }
  for (double alpha : {1e-3, 0.3, 7e4}) {
    std::vector<double> sb(b);
    for (auto& v : sb) v *= alpha;
    CHECK(std::abs(si_sdr(a, sb) - si_sdr(a, b)) <= 1e-12);
  }
  std::vector<double> orth{1, -1, 1, -1};
  CHECK(si_sdr(x, orth) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(si_sdr(std::vector<double>(4, 0.0), xh), UndefinedReferenceError);
  CHECK_THROWS_AS(si_sdr(x, std::vector<double>(3, 1.0)), DimensionError);
  // Printed (unscaled) form for comparison.
  CHECK(si_sdr(x, xh, SdrForm::kPlain) == doctest::Approx(10 * std::log10(4.0 / 1.0)));
}

TEST_CASE("si_sdr loss clip and gradient") {
  Tensor<double> x({1, 4}, {1, 1, 1, 1});
  CHECK(si_sdr_loss(x, Tensor<double>({1, 4}, {1, -1, 1, -1})).item() == 30.0);
  CHECK(si_sdr_loss(x, x).item() == -kSdrCapDb);
  auto clean = Tensor<double>::full({2, 50}, 0.0);
  {
    auto d = clean.mutable_data();
    auto s = noise(100, 14);
    std::copy(s.begin(), s.end(), d.begin());
  }
  auto est = Tensor<double>({2, 50}, noise(100, 15));
  {
    auto d = est.mutable_data();
    for (std::size_t i = 0; i < 100; ++i) d[i] += 2 * clean.data()[i];
  }
  auto rep = testing::check_gradients([&] { return si_sdr_loss(clean, est); }, {{"clean", clean}, {"est", est}});
  CHECK(rep.max_rel <= 1e-5);
  // Items on the clip contribute no gradient.
  Tensor<double> e2({1, 4}, {1, -1, 1, -1});
  e2.set_requires_grad(true);
  backward(si_sdr_loss(x, e2));
  for (double g : e2.grad()) CHECK(g == 0.0);
}

TEST_CASE("wav round trip and rejection") {
  Waveform w{noise(1000, 16, 0.2), kSampleRate};
  auto f = decode_wav(encode_wav(w, WavEncoding::kFloat32));
  REQUIRE(f.size() == 1000);
  for (std::size_t i = 0; i < 1000; ++i) CHECK(f.samples[i] == static_cast<double>(static_cast<float>(w.samples[i])));
  auto p = decode_wav(encode_wav(w, WavEncoding::kPcm16));
  for (std::size_t i = 0; i < 1000; ++i) CHECK(std::abs(p.samples[i] - w.samples[i]) <= 1.0 / 32768 + 1e-12);
  auto bytes = encode_wav(w);
  bytes[24] = 0x44;  // sample rate 16000 -> 15940
  CHECK_THROWS_AS(decode_wav(bytes), FormatError);
  CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F', 'F'}), FormatError);
  const auto path = std::filesystem::temp_directory_path() / "avse_test_wav.wav";
  write_wav(path, w);
  CHECK(read_wav(path).size() == 1000);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
