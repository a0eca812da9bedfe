// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avse/checkpoint.hpp"
#include "avse/corpus.hpp"
#include "avse/error.hpp"
#include "avse/ops.hpp"
#include "avse/optim.hpp"
#include "avse/synth.hpp"
#include "avse/trainer.hpp"

using namespace avse;
namespace fs = std::filesystem;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Small, quick training setup shared by several cases.
TrainConfig quick_cfg() {
  auto c = TrainConfig::tiny();
  c.batch = 2;
  c.segment_len = 3840;  // six visual frames
  c.epochs = 4;
  c.seed = 11;
  return c;
}

struct SmallCorpus {
  TempDir dir{"avse_test_corpus"};
  std::vector<Utterance> train, val;
  SmallCorpus() {
    SynthSpec s;
    s.seed = 21;
    s.duration_s = 0.5;
    auto c = write_synth_corpus(dir.path, s, 4, 2, 0);
    train = load_split(c, "train");
    val = load_split(c, "val");
  }
};

}  // namespace

TEST_SUITE("training") {

TEST_CASE("synthetic items hit the requested SNR") {
  SynthSpec s;
  s.seed = 5;
  s.duration_s = 1.0;
  for (auto kind : {NoiseKind::kWhite, NoiseKind::kBabble}) {
    s.noise = kind;
    for (std::uint64_t i = 0; i < 6; ++i) {
      auto it = synth_item(s, i);
      CHECK(it.snr_db >= s.snr_lo_db);
      CHECK(it.snr_db <= s.snr_hi_db);
      CHECK(std::abs(snr_db(it.clean.samples, it.noise.samples) - it.snr_db) <= 0.1);
      REQUIRE(it.noisy.size() == it.clean.size());
      for (std::size_t k = 0; k < it.noisy.size(); k += 97)
        CHECK(it.noisy.samples[k] == doctest::Approx(it.clean.samples[k] + it.noise.samples[k]).epsilon(1e-12));
      CHECK(it.visual.count == visual_frame_count(it.clean.size(), 25.0, kSampleRate));
      CHECK(it.cond == to_string(kind));
    }
  }
  auto v = scale_to_snr(std::vector<double>(100, 1.0), std::vector<double>(100, 0.2), -5.0);
  CHECK(snr_db(std::vector<double>(100, 1.0), v) == doctest::Approx(-5.0).epsilon(1e-12));
}

TEST_CASE("synthesis is deterministic and index-addressed") {
  SynthSpec s;
  s.seed = 8;
  s.duration_s = 0.5;
  auto batch = synth_batch(s, 3, 2);
  auto single = synth_item(s, 3);
  CHECK(batch[1].noisy.samples == single.noisy.samples);
  CHECK(batch[1].visual.values == single.visual.values);
  auto other = synth_item(s, 4);
  CHECK(other.clean.samples != single.clean.samples);
}

TEST_CASE("visual stream tracks the speech envelope") {
  SynthSpec s;
  s.seed = 9;
  s.duration_s = 3.0;
  auto it = synth_item(s, 0);
  const std::size_t spf = kSampleRate / 25;
  std::vector<double> env, feat;
  for (std::size_t k = 0; k < it.visual.count; ++k) {
    const std::size_t at = std::min(k * spf, it.envelope.size() - 1);
    env.push_back(it.envelope[at]);
    feat.push_back(it.visual.values[k * it.visual.dim]);
  }
  const double r = pearson(env, feat);
  MESSAGE("envelope correlation " << r);
  CHECK(r >= 0.95);
}

TEST_CASE("synthesis config errors") {
  SynthSpec s;
  s.snr_lo_db = 5.0;
  s.snr_hi_db = -5.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(synth_item(s, 0), ConfigError);
  SynthSpec w;
  w.noise = NoiseKind::kWav;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  CHECK_THROWS_AS(parse_noise_kind("pink"), ConfigError);
}

TEST_CASE("rmsprop minimizes a quadratic") {
  Tensor<double> w({4}, {3.0, -2.0, 0.5, 10.0});
  w.set_requires_grad(true);
  ParamList<double> ps{{"w", w, true}};
  RmsProp opt;
  double first = 0, last = 0;
  for (int it = 0; it < 3000; ++it) {
    auto loss = sum(mul(w, w));
    if (it == 0) first = loss.item();
    last = loss.item();
    w.node()->grad.clear();
    backward(loss);
    opt.step(ps, 0.01);
  }
  CHECK(last < 1e-3 * first);
  CHECK(opt.steps == 3000);
}

TEST_CASE("rmsprop update rules") {
  Tensor<double> w({3}, {1.0, -1.0, 2.0});
  w.set_requires_grad(true);
  ParamList<double> ps{{"w", w, true}};
  RmsProp opt;
  // No gradient: weights stay put.
  opt.step(ps, 0.1);
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[2] == 2.0);

  // First step with a gradient g moves by lr * g / (|g| sqrt(1 - alpha) + eps).
  auto loss = sum(mul(w, w));
  backward(loss);
  opt.step(ps, 0.1);
  const double expect = 1.0 - 0.1 * 2.0 / (std::sqrt(0.01 * 4.0) + 1e-8);
  CHECK(w.data()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(-expect).epsilon(1e-12));  // symmetric

  w.node()->grad.assign(3, std::numeric_limits<double>::quiet_NaN());
  const double before = w.data()[2];
  try {
    opt.step(ps, 0.1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK(w.data()[2] == before);
}

TEST_CASE("plateau scheduler") {
  PlateauScheduler s;
  for (int e = 1; e <= 5; ++e) CHECK(s.step(1.0) == 1e-4);
  CHECK(s.step(1.0) == doctest::Approx(8e-5).epsilon(1e-15));
  for (int e = 7; e <= 10; ++e) CHECK(s.step(1.0) == doctest::Approx(8e-5).epsilon(1e-15));
  CHECK(s.step(1.0) == doctest::Approx(6.4e-5).epsilon(1e-15));
  CHECK(s.reductions == 2);

  PlateauScheduler d;
  double v = 10.0;
  for (int e = 0; e < 30; ++e) CHECK(d.step(v -= 0.1) == 1e-4);

  // Improvements inside the threshold do not count.
  PlateauScheduler t;
  t.step(1.0);
  for (int e = 0; e < 5; ++e) t.step(1.0 - 1e-6 * (e + 1));
  CHECK(t.lr == doctest::Approx(8e-5));
  CHECK_THROWS_AS(t.step(std::nan("")), TrainingError);
}

TEST_CASE("crops start on visual frame boundaries") {
  Rng r(3);
  for (int i = 0; i < 200; ++i) {
    auto c = draw_crop(32000 + 37, 16000, 640, r);
    CHECK(c.sample_start % 640 == 0);
    CHECK(c.sample_start == c.frame_start * 640);
    CHECK(c.sample_start + 16000 <= 32037);
    CHECK(c.frames == 26);
  }
  CHECK_THROWS_AS(draw_crop(32000, 16001, 640, r), ConfigError);
  CHECK_THROWS_AS(draw_crop(1000, 16000, 640, r), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  auto m = AvseModel<float>::init(ModelConfig::tiny(), 4);
  auto ck = model_checkpoint(m, TrainConfig::tiny());
  ck.put_scalar("meta/x", 2.5);
  auto bytes = encode_checkpoint(ck);
  auto back = decode_checkpoint(bytes);
  CHECK(back.scalar("meta/x") == 2.5);
  CHECK(back.train.lr == TrainConfig::tiny().lr);
  auto m2 = model_from_checkpoint<float>(back);
  auto a = m.export_state(), b = m2.export_state();
  REQUIRE(a.size() == b.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].values == b[i].values);
    total += a[i].values.size();
  }
  CHECK(total == m.param_count());
  CHECK(encode_checkpoint(back) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.resize(bad.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] ^= 1;  // fingerprint no longer matches the config
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(ck.at("nope"), FormatError);
}

TEST_CASE("eval mode is deterministic") {
  auto m = AvseModel<float>::init(ModelConfig::tiny(), 6);
  SynthSpec s;
  s.duration_s = 1.0;
  auto it = synth_item(s, 1);
  auto a = m.enhance(it.noisy, it.visual, MaskMode::kSoft);
  auto b = m.enhance(it.noisy, it.visual, MaskMode::kSoft);
  CHECK(a.raw.samples == b.raw.samples);
  CHECK(a.enhanced.samples == b.enhanced.samples);
}

TEST_CASE("short training run lowers the loss and resumes exactly") {
  SmallCorpus corpus;
  auto cfg = quick_cfg();

  TempDir full("avse_test_train_full"), split("avse_test_train_split");
  auto m1 = AvseModel<float>::init(ModelConfig::tiny(), 2);
  const double before = validate(m1, corpus.val).loss;
  auto r1 = train(m1, corpus.train, corpus.val, cfg, {full.path});
  REQUIRE(r1.curve.size() == 4);
  MESSAGE("val loss " << before << " -> " << r1.curve.back().val_loss);
  CHECK(r1.curve.back().train_loss < r1.curve.front().train_loss);
  CHECK(r1.best_val_loss < before);
  CHECK(fs::exists(full.path / "best.ckpt"));
  CHECK(fs::exists(full.path / "loss_curve.csv"));

  auto m2 = AvseModel<float>::init(ModelConfig::tiny(), 2);
  auto part = train(m2, corpus.train, corpus.val, cfg, {split.path, false, 2});
  CHECK(part.curve.size() == 2);
  auto m3 = AvseModel<float>::init(ModelConfig::tiny(), 2);
  auto r3 = train(m3, corpus.train, corpus.val, cfg, {split.path, true});
  REQUIRE(r3.curve.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r3.curve[i].train_loss == r1.curve[i].train_loss);
    CHECK(r3.curve[i].val_loss == r1.curve[i].val_loss);
  }
  auto w1 = m1.export_state(), w3 = m3.export_state();
  for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1[i].values == w3[i].values);
  CHECK(slurp(full.path / "last.ckpt") == slurp(split.path / "last.ckpt"));
  CHECK(slurp(full.path / "loss_curve.csv") == slurp(split.path / "loss_curve.csv"));

  std::ostringstream os;
  write_curve_csv(os, r1.curve);
  CHECK(os.str().rfind("epoch,train_loss,val_loss,val_sisdr,lr\n1,", 0) == 0);
}

TEST_CASE("training input validation") {
  SmallCorpus corpus;
  auto m = AvseModel<float>::init(ModelConfig::tiny(), 1);
  auto cfg = quick_cfg();
  CHECK_THROWS_AS(train(m, {}, corpus.val, cfg), ConfigError);
  auto bad = corpus.train;
  bad[0].visual.count -= 1;
  bad[0].visual.values.resize(bad[0].visual.count * bad[0].visual.dim);
  CHECK_THROWS_AS(train(m, bad, corpus.val, cfg), AlignmentError);
  cfg.segment_len = 100000;
  CHECK_THROWS_AS(train(m, corpus.train, corpus.val, cfg), ConfigError);
}

}  // TEST_SUITE
