// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "avse/config.hpp"
#include "avse/encoders.hpp"
#include "avse/error.hpp"
#include "avse/ops.hpp"

using namespace avse;

TEST_SUITE("encoders") {

TEST_CASE("audio encoder length algebra, paper preset") {
  const auto cfg = ModelConfig::paper();
  for (std::size_t T : {16u, 17u, 23u, 24u, 1000u, 16000u, 64000u}) CHECK(encoded_length(T, cfg) == (T - 16) / 8 + 1);
  CHECK_THROWS_AS(encoded_length(15, cfg), SignalTooShortError);
  Rng r(1);
  auto enc = AudioEncoder<float>::init(cfg, r);
  auto z = enc.forward(Tensor<float>::randn({1, 16000}, r, 0.1));
  CHECK(z.shape() == Shape{1, 256, 1999});
  for (float v : z.data()) CHECK(v >= 0.0f);
  auto zero = enc.forward(Tensor<float>({2, 400}));
  for (float v : zero.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(enc.forward(Tensor<float>({1, 10})), SignalTooShortError);
  CHECK_THROWS_AS(enc.forward(Tensor<float>({10})), DimensionError);
}

TEST_CASE("features mode is a bit-exact passthrough") {
  const auto cfg = ModelConfig::paper();
  Rng r(2);
  auto venc = VisualEncoder<double>::init(cfg, r);
  std::vector<float> vals(5 * 256);
  for (auto& v : vals) v = static_cast<float>(r.normal());
  auto out = venc.encode(VisualStream::features(5, 256, 25.0, vals));
  REQUIRE(out.shape() == Shape{5, 256});
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(out.data()[i] == static_cast<double>(vals[i]));
  CHECK_THROWS_AS(venc.encode(VisualStream::features(5, 128, 25.0, std::vector<float>(5 * 128))), DimensionError);
}

TEST_CASE("frames mode, tiny preset") {
  const auto cfg = ModelConfig::tiny();
  Rng r(3);
  auto venc = VisualEncoder<float>::init(cfg, r);
  std::vector<float> frames(6 * 32 * 32);
  for (auto& v : frames) v = static_cast<float>(r.uniform());
  auto out = venc.encode(VisualStream::frames(6, 32, 32, 25.0, frames));
  CHECK(out.shape() == Shape{6, 32});
  // Constant frames: every frame sees the same (replicated) temporal context.
  auto flat = venc.encode(VisualStream::frames(4, 32, 32, 25.0, std::vector<float>(4 * 32 * 32, 0.4f)));
  for (std::size_t n = 1; n < 4; ++n)
    for (std::size_t d = 0; d < 32; ++d) CHECK(flat.data()[n * 32 + d] == flat.data()[d]);
  CHECK_THROWS_AS(venc.encode(VisualStream::frames(2, 16, 16, 25.0, std::vector<float>(2 * 16 * 16))),
                  DimensionError);
  ParamList<float> ps;
  venc.collect(ps);
  for (const auto& p : ps) CHECK_FALSE(p.trainable);
}

TEST_CASE("visual trunk size, paper preset") {
  // front 32x5x7x7 + stages (3x3 convs, 1x1 projections) + head 256x256.
  std::size_t expect = 32 * 5 * 7 * 7;
  const std::size_t ch[4] = {32, 64, 128, 256};
  std::size_t in = 32;
  for (std::size_t s = 0; s < 4; ++s) {
    expect += ch[s] * in * 9 + ch[s] * ch[s] * 9;
    if (s > 0 || in != ch[s]) expect += ch[s] * in;
    in = ch[s];
  }
  expect += 256 * 256;
  Rng r(4);
  auto venc = VisualEncoder<float>::init(ModelConfig::paper(), r);
  ParamList<float> ps;
  venc.collect(ps);
  CHECK(total_elements(ps) == expect);
  CHECK(expect == 1296032);
}

TEST_CASE("temporal alignment") {
  Tensor<double> x({1, 2, 2}, {1.0, 10.0, 3.0, 20.0});
  auto y = temporal_align(x, 3);
  REQUIRE(y.shape() == Shape{1, 3, 2});
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[2] == 2.0);
  CHECK(y.data()[3] == 15.0);
  CHECK(y.data()[4] == 3.0);

  Rng r(5);
  auto v = Tensor<double>::randn({2, 7, 3}, r);
  auto same = temporal_align(v, 7);
  for (std::size_t i = 0; i < v.numel(); ++i) CHECK(same.data()[i] == v.data()[i]);

  auto feats = Tensor<double>::randn({1, 26, 4}, r);
  auto up = temporal_align(feats, 1999);
  REQUIRE(up.shape() == Shape{1, 1999, 4});
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(up.data()[d] == feats.data()[d]);
    CHECK(up.data()[1998 * 4 + d] == feats.data()[25 * 4 + d]);
    double lo = 1e9, hi = -1e9;
    for (std::size_t n = 0; n < 26; ++n) {
      lo = std::min(lo, feats.data()[n * 4 + d]);
      hi = std::max(hi, feats.data()[n * 4 + d]);
    }
    for (std::size_t t = 0; t < 1999; ++t) {
      CHECK(up.data()[t * 4 + d] >= lo - 1e-12);
      CHECK(up.data()[t * 4 + d] <= hi + 1e-12);
    }
  }
  // Monotone source index: a ramp stays a ramp.
  std::vector<double> ramp(26);
  for (std::size_t n = 0; n < 26; ++n) ramp[n] = static_cast<double>(n);
  auto rr = temporal_align(Tensor<double>({1, 26, 1}, ramp), 1999);
  for (std::size_t t = 1; t < 1999; ++t) CHECK(rr.data()[t] >= rr.data()[t - 1]);
}

TEST_CASE("visual file formats") {
  Rng r(6);
  std::vector<float> vals(3 * 4);
  for (auto& v : vals) v = static_cast<float>(r.normal());
  auto vs = VisualStream::features(3, 4, 30.0, vals);
  auto back = decode_vft(encode_vft(vs));
  CHECK(back.count == 3);
  CHECK(back.dim == 4);
  CHECK(back.fps == 30.0);
  CHECK(back.values == vals);
  auto bytes = encode_vft(vs);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VFT1");
  bytes.pop_back();
  CHECK_THROWS_AS(decode_vft(bytes), FormatError);

  std::vector<float> px(2 * 3 * 5);
  for (auto& v : px) v = static_cast<float>(r.uniform());
  auto fr = VisualStream::frames(2, 3, 5, 25.0, px);
  auto fb = decode_vfr(encode_vfr(fr));
  CHECK(fb.mode == VisualStream::Mode::kFrames);
  CHECK(fb.values == px);
  auto bad = encode_vfr(fr);
  const float big = 1.5f;
  std::memcpy(bad.data() + 16, &big, 4);
  CHECK_THROWS_AS(decode_vfr(bad), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "avse_test_visual";
  std::filesystem::create_directories(dir);
  write_visual(dir / "a.vft", vs);
  write_visual(dir / "a.vfr", fr);
  CHECK(read_visual(dir / "a.vft").mode == VisualStream::Mode::kFeatures);
  CHECK(read_visual(dir / "a.vfr").mode == VisualStream::Mode::kFrames);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
