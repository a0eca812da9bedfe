// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "avse/bench.hpp"
#include "avse/checkpoint.hpp"
#include "avse/cli.hpp"
#include "avse/corpus.hpp"
#include "avse/diag.hpp"
#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/metrics.hpp"
#include "avse/trainer.hpp"
#include "avse/wav.hpp"

using namespace avse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "avse");
  return run_cli(args);
}

FeatureStream random_stream(std::size_t frames, std::size_t dim, std::uint64_t seed) {
  Rng r(seed);
  FeatureStream s{frames, dim, std::vector<double>(frames * dim)};
  for (auto& v : s.values) v = r.normal();
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string last_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  return last;
}

std::vector<std::string> files_in(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("parameter counting") {
  Rng r(1);
  ParamList<double> ps{{"w", Tensor<double>::randn({10, 10}, r), true}, {"b", Tensor<double>({10}), true}};
  CHECK(total_elements(ps) == 110);

  // Hand-tallied layer table for the tiny preset.
  const std::size_t encoder = 32 * 16;
  const std::size_t visual = 8 * 5 * 7 * 7                       // front
                             + 2 * 8 * 8 * 9                     // stage 1
                             + 16 * 8 * 9 + 16 * 16 * 9 + 16 * 8  // stage 2 with projection
                             + 2 * 16 * 16 * 9 + 16 * 16          // stage 3
                             + 32 * 16 * 9 + 32 * 32 * 9 + 32 * 16
                             + 32 * 32;                           // head
  const std::size_t attention = 4 * 32 * 32 + 32 * 2;
  const std::size_t gru = 2 * 96 * 32 + 2 * 96;
  const std::size_t separator = 2 * (2 * gru + 4 * 32) + 32 * 16;
  const std::size_t decoder = 16 * 16;
  auto m = AvseModel<float>::init(ModelConfig::tiny(), 0);
  CHECK(m.param_count() == encoder + visual + attention + separator + decoder);
  CHECK(m.param_count() == 57960);

  std::size_t saved = 0;
  for (const auto& a : model_checkpoint(m).with_prefix("w/")) saved += a.values.size();
  CHECK(saved == m.param_count());

  auto paper = AvseModel<float>::init(ModelConfig::paper(), 0);
  const double dev = (static_cast<double>(paper.param_count()) - 5.90e6) / 5.90e6;
  MESSAGE("paper preset: " << paper.param_count() << " parameters, " << 100 * dev << "% vs 5.90M");
  CHECK(paper.param_count() > 0);
}

TEST_CASE("real-time factor of a sleeping stub") {
  const double rtf = bench_rtf([] { std::this_thread::sleep_for(std::chrono::milliseconds(500)); }, 5.0, 1, 0);
  CHECK(rtf >= 0.10);
  CHECK(rtf <= 0.11);
  CHECK_THROWS_AS(bench_rtf([] {}, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(time_callable([] {}, 0), ConfigError);
  int calls = 0;
  auto t = time_callable([&] { ++calls; }, 4, 2);
  CHECK(calls == 6);
  CHECK(t.p95_s >= t.median_s);
}

TEST_CASE("benchmark ordering and duration scaling") {
  auto tiny = AvseModel<float>::init(ModelConfig::tiny(), 0);
  auto paper = AvseModel<float>::init(ModelConfig::paper(), 0);
  const auto rt = bench_model(tiny, 1.0, 3);
  const auto rp = bench_model(paper, 1.0, 1, 0.0, 0);
  MESSAGE("rtf tiny " << rt.rtf << ", paper " << rp.rtf);
  CHECK(rt.rtf < rp.rtf);
  CHECK(rt.rtf < 1.0);
  CHECK(rt.weight_bytes_f32 == 4 * rt.param_count);
  CHECK(rp.peak_activation_bytes > rt.peak_activation_bytes);

  double prev = 0.0;
  for (double d : {1.0, 2.0, 4.0}) {
    const double secs = bench_model(tiny, d, 3).rtf * d;
    CHECK(secs >= 0.9 * prev);
    prev = secs;
  }
  auto chunked = bench_model(tiny, 2.0, 3, 0.5);
  CHECK(chunked.latency_mean_ms > 0.0);
  std::ostringstream js;
  write_bench_json(js, chunked);
  CHECK(js.str().find("\"param_count\": 57960") != std::string::npos);
}

TEST_CASE("diagnostics: identical streams") {
  auto a = random_stream(20, 16, 1);
  auto r = diag_crossmodal(a, a, 5);
  for (std::size_t i = 0; i < 20; ++i) CHECK(r.at(i, i) == 1.0);
  CHECK(r.peak_lag == 0);
  CHECK(r.lag(0) == 1.0);
}

TEST_CASE("diagnostics: shifted visual stream") {
  auto a = random_stream(64, 16, 2);
  FeatureStream v = random_stream(64, 16, 3);
  for (std::size_t t = 4; t < 64; ++t)
    std::copy_n(a.row(t - 4), 16, v.values.begin() + static_cast<std::ptrdiff_t>(t * 16));
  auto r = diag_crossmodal(a, v, 10);
  CHECK(r.peak_lag == 4);
  CHECK(r.lag(4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("diagnostics: independent streams") {
  auto r = diag_crossmodal(random_stream(64, 32, 4), random_stream(64, 32, 5), 8);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j)
      if (i != j) {
        s += r.at(i, j);
        ++n;
      }
  CHECK(std::abs(s / static_cast<double>(n)) <= 0.1);
}

TEST_CASE("diagnostics: undefined correlation") {
  auto a = random_stream(6, 4, 6);
  auto v = random_stream(6, 4, 7);
  for (std::size_t d = 0; d < 4; ++d) v.values[2 * 4 + d] = 0.25;
  auto r = diag_crossmodal(a, v, 2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::isnan(r.at(i, 2)));
  CHECK(std::isfinite(r.at(0, 0)));
  std::ostringstream os;
  write_corr_csv(os, r);
  CHECK(os.str().rfind("i,j,corr\n", 0) == 0);
  CHECK(os.str().find("0,2,nan\n") != std::string::npos);
  std::ostringstream lag;
  write_lag_csv(lag, r);
  CHECK(lag.str().rfind("lag,corr\n-2,", 0) == 0);

  TempDir dir("avse_test_diag");
  write_heatmap_pgm(dir.path / "c.pgm", r);
  auto bytes = read_file(dir.path / "c.pgm");
  CHECK(std::string(bytes.begin(), bytes.begin() + 3) == "P5\n");

  CHECK_THROWS_AS(diag_crossmodal(a, random_stream(5, 4, 8), 1), AlignmentError);
  CHECK_THROWS_AS(diag_crossmodal(a, random_stream(6, 3, 8), 1), DimensionError);
}

TEST_CASE("pooling latent frames onto the visual rate") {
  FeatureStream latent{8, 1, {0, 1, 2, 3, 4, 5, 6, 7}};
  auto p = pool_to_frames(latent, 2, 4.0);
  REQUIRE(p.frames == 2);
  CHECK(p.values[0] == 1.5);
  CHECK(p.values[1] == 5.5);
  auto tail = pool_to_frames(latent, 3, 4.0);
  CHECK(tail.values[2] == 7.0);
}

TEST_CASE("cli: enhance and mask-eval") {
  TempDir dir("avse_test_cli");
  REQUIRE(cli({"--seed", "3", "synth", "-o", dir / "corpus", "--train", "1", "--val", "0", "--test", "1", "--duration",
               "0.6"}) == 0);
  auto corpus = load_corpus(dir.path / "corpus");
  const auto e = corpus.split("test").at(0);
  const std::string wav = (corpus.root / e.noisy).string(), vis = (corpus.root / e.visual).string();

  REQUIRE(cli({"--preset", "tiny", "enhance", wav, vis, "-o", dir / "out.wav", "--mask-out", dir / "m.msk"}) == 0);
  const auto in = read_wav(wav), out = read_wav(dir / "out.wav");
  CHECK(out.size() == in.size());
  CHECK(out.rate == in.rate);

  REQUIRE(cli({"mask-eval", dir / "m.msk", dir / "m.msk", "-o", dir / "score.csv"}) == 0);
  const auto row = split_csv(last_line(dir.path / "score.csv"));
  REQUIRE(row.size() == 5);
  CHECK(row[1] == "1");
  CHECK(row[2] == "0");
  CHECK(row[3] == "1");
}

TEST_CASE("cli: failures leave no output behind") {
  TempDir dir("avse_test_cli_fail");
  REQUIRE(cli({"synth", "-o", dir / "corpus", "--train", "0", "--val", "0", "--test", "1", "--duration", "0.5"}) == 0);
  auto corpus = load_corpus(dir.path / "corpus");
  const auto e = corpus.split("test").at(0);
  const std::string wav = (corpus.root / e.noisy).string();

  CHECK(cli({"--bogus-flag", "bench"}) != 0);
  CHECK(cli({"bench", "--no-such-option"}) != 0);
  CHECK(cli({"--preset", "huge", "bench"}) != 0);

  const fs::path junk = dir.path / "junk.vft";
  {
    std::ofstream f(junk, std::ios::binary);
    f << "VFT1garbage";
  }
  const auto before = files_in(dir.path);
  CHECK(cli({"enhance", wav, junk.string(), "-o", dir / "out.wav"}) == 1);
  CHECK(cli({"enhance", dir / "missing.wav", junk.string(), "-o", dir / "out2.wav"}) == 1);
  CHECK(cli({"eval", "--corpus", dir / "corpus", "--enhanced-dir", dir / "nowhere", "-o", dir / "r.csv"}) == 1);
  CHECK(cli({"mask-eval", junk.string(), junk.string(), "-o", dir / "s.csv"}) == 1);
  CHECK(files_in(dir.path) == before);
}

TEST_CASE("cli: partial corpus failure exits 2") {
  TempDir dir("avse_test_cli_partial");
  REQUIRE(cli({"synth", "-o", dir / "corpus", "--train", "0", "--val", "0", "--test", "2", "--duration", "1.5"}) == 0);
  auto corpus = load_corpus(dir.path / "corpus");
  const auto tests = corpus.split("test");
  fs::create_directories(dir.path / "enh");
  fs::copy_file(corpus.root / tests[0].noisy, dir.path / "enh" / (tests[0].utt + ".wav"));
  CHECK(cli({"eval", "--corpus", dir / "corpus", "--enhanced-dir", dir / "enh", "-o", dir / "r.csv"}) == 2);
  REQUIRE(fs::exists(dir.path / "r.csv"));
  std::ifstream f(dir.path / "r.csv");
  std::string header, first;
  std::getline(f, header);
  std::getline(f, first);
  CHECK(split_csv(first).at(0) == tests[0].utt);
  // Noisy scored as enhanced: both columns agree.
  CHECK(split_csv(first).at(3) == split_csv(first).at(4));
}

TEST_CASE("cli: eval reproduces the validation score of a training run") {
  TempDir dir("avse_test_cli_train");
  REQUIRE(cli({"--seed", "5", "synth", "-o", dir / "corpus", "--train", "4", "--val", "2", "--test", "0",
               "--duration", "1.5"}) == 0);
  {
    std::ofstream f(dir.path / "cfg.json");
    f << R"({"train": {"batch": 2, "segment_len": 3840}})";
  }
  REQUIRE(cli({"--seed", "5", "--config", dir / "cfg.json", "train", "--corpus", dir / "corpus", "-o", dir / "run",
               "--epochs", "2"}) == 0);
  for (const char* f : {"best.ckpt", "last.ckpt", "loss_curve.csv", "config.json"})
    CHECK(fs::exists(dir.path / "run" / f));
  const double val_sisdr = std::stod(split_csv(last_line(dir.path / "run" / "loss_curve.csv")).at(3));

  REQUIRE(cli({"--ckpt", dir / "run/last.ckpt", "--mask-mode", "off", "eval", "--corpus", dir / "corpus", "--split",
               "val", "-o", dir / "val.csv"}) == 0);
  const auto all = split_csv(last_line(dir.path / "val.csv"));
  REQUIRE(all.at(0) == "ALL");
  const double eval_sisdr = std::stod(all.at(4));
  MESSAGE("training val SI-SDR " << val_sisdr << ", eval " << eval_sisdr);
  CHECK(std::abs(eval_sisdr - val_sisdr) <= 0.01);

  // Same number straight from the library.
  auto model = model_from_checkpoint<float>(load_checkpoint(dir.path / "run" / "last.ckpt"));
  auto val = load_split(load_corpus(dir.path / "corpus"), "val");
  CHECK(std::abs(validate(model, val).sisdr - eval_sisdr) <= 1e-4);
}

TEST_CASE("cli: bench and diag outputs") {
  TempDir dir("avse_test_cli_misc");
  REQUIRE(cli({"bench", "--duration", "1", "--reps", "1", "--chunk", "0.5", "-o", dir / "bench.json"}) == 0);
  const auto js = read_file(dir.path / "bench.json");
  CHECK(std::string(js.begin(), js.end()).find("\"rtf\"") != std::string::npos);

  REQUIRE(cli({"synth", "-o", dir / "corpus", "--train", "0", "--val", "0", "--test", "1", "--duration", "1"}) == 0);
  auto corpus = load_corpus(dir.path / "corpus");
  const auto e = corpus.split("test").at(0);
  REQUIRE(cli({"diag", (corpus.root / e.noisy).string(), (corpus.root / e.visual).string(), "-o", dir / "diag",
               "--max-lag", "6", "--plot"}) == 0);
  for (const char* f : {"corr.csv", "lag.csv", "corr.pgm"}) CHECK(fs::exists(dir.path / "diag" / f));
}

}  // TEST_SUITE
