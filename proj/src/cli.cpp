// SPDX-License-Identifier: Apache-2.0

#include "avse/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "avse/bench.hpp"
#include "avse/checkpoint.hpp"
#include "avse/corpus.hpp"
#include "avse/diag.hpp"
#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/metrics.hpp"
#include "avse/model.hpp"
#include "avse/ops.hpp"
#include "avse/parallel.hpp"
#include "avse/synth.hpp"
#include "avse/trainer.hpp"
#include "avse/wav.hpp"

namespace avse {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Parsed global flags.
struct Globals {
  std::string config_path;
  std::string preset = "tiny";
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::string mask_mode = "binary";
  std::string ckpt;
};

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

Configs resolve_configs(const Globals& g) {
  Configs c;
  c.model = ModelConfig::preset_named(g.preset);
  c.train = g.preset == "tiny" ? TrainConfig::tiny() : TrainConfig::paper();
  if (!g.config_path.empty()) {
    const auto bytes = read_file(g.config_path);
    json j;
    try {
      j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw ConfigError("config " + g.config_path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + g.config_path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "model" && it.key() != "train")
        throw ConfigError("config " + g.config_path + ": unknown section '" + it.key() + "'");
    if (j.contains("model")) {
      const auto& m = j.at("model");
      if (m.is_object() && m.contains("preset"))
        c.model = ModelConfig::preset_named(m.at("preset").get<std::string>());
      c.model = merge_model_config(c.model, m);
    }
    if (j.contains("train")) c.train = merge_train_config(c.train, j.at("train"));
  }
  c.train.seed = g.seed;
  c.model.validate();
  c.train.validate();
  return c;
}

template <typename T>
AvseModel<T> load_or_init(const Globals& g, const Configs& c) {
  if (!g.ckpt.empty()) return model_from_checkpoint<T>(load_checkpoint(g.ckpt));
  return AvseModel<T>::init(c.model, g.seed);
}

void write_text(const fs::path& p, const std::string& s) {
  write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::size_t n_train = 160, n_val = 20, n_test = 20;
  double duration = 2.0, snr_lo = -10.0, snr_hi = 10.0;
  std::string noise = "white";
  std::string noise_wav;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto c = resolve_configs(g);
  SynthSpec spec;
  spec.seed = g.seed;
  spec.duration_s = a.duration;
  spec.snr_lo_db = a.snr_lo;
  spec.snr_hi_db = a.snr_hi;
  spec.noise = parse_noise_kind(a.noise);
  if (!a.noise_wav.empty()) spec.noise_wav = read_wav(a.noise_wav).samples;
  spec.visual_dim = c.model.visual_dim;
  spec.fps = c.model.fps;
  const auto corpus = write_synth_corpus(a.out, spec, a.n_train, a.n_val, a.n_test);
  std::cout << "wrote " << corpus.entries.size() << " utterances to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string corpus, out;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  bool resume = false;
};

template <typename T>
int cmd_train(const Globals& g, const TrainArgs& a) {
  auto c = resolve_configs(g);
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.lr) c.train.lr = *a.lr;
  c.train.validate();
  const auto corpus = load_corpus(a.corpus);
  const auto tr = load_split(corpus, "train");
  const auto va = load_split(corpus, "val");
  auto model = AvseModel<T>::init(c.model, g.seed);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.json", json{{"model", c.model}, {"train", c.train}}.dump(2) + "\n");
  TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = a.resume;
  opt.log = &std::cout;
  const auto res = train(model, tr, va, c.train, opt);
  std::cout << "best epoch " << res.best_epoch << " val_loss " << format_number(res.best_val_loss) << "\n";
  return 0;
}

// ---------------------------------------------------------------- enhance

struct EnhanceArgs {
  std::string wav, visual, out, raw_out, mask_out;
};

VisualStream read_visual_for(const std::string& path, const ModelConfig& m) {
  auto v = read_visual(path);
  if (v.mode == VisualStream::Mode::kFrames) v.fps = m.fps;
  return v;
}

template <typename T>
int cmd_enhance(const Globals& g, const EnhanceArgs& a) {
  const auto c = resolve_configs(g);
  const auto model = load_or_init<T>(g, c);
  const auto noisy = read_wav(a.wav);
  const auto vis = read_visual_for(a.visual, model.config());
  const auto r = model.enhance(noisy, vis, parse_mask_mode(g.mask_mode));
  write_wav(a.out, r.enhanced);
  if (!a.raw_out.empty()) write_wav(a.raw_out, r.raw);
  if (!a.mask_out.empty()) write_file_atomic(a.mask_out, encode_msk(r.mask.binary));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string corpus, split = "test", out, enhanced_dir, pesq_cmd;
};

template <typename T>
int cmd_eval(const Globals& g, const EvalArgs& a) {
  const auto c = resolve_configs(g);
  const auto corpus = load_corpus(a.corpus);
  const auto entries = corpus.split(a.split);
  if (entries.empty()) throw UsageError("eval: split '" + a.split + "' has no items");
  const bool use_model = a.enhanced_dir.empty();
  std::optional<AvseModel<T>> model;
  if (use_model) model = load_or_init<T>(g, c);
  const MaskMode mode = parse_mask_mode(g.mask_mode);

  std::vector<std::optional<EvalRow>> rows(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), worker_count(), [&](std::size_t i) {
    const auto& e = entries[i];
    try {
      const auto u = load_utterance(corpus, e);
      EvalInput in;
      in.utt = e.utt;
      in.cond = e.cond;
      in.snr_db = e.snr_db;
      in.clean = u.clean;
      in.noisy = u.noisy;
      std::string enh_path;
      if (use_model) {
        const auto r = model->enhance(u.noisy, u.visual, mode);
        in.enhanced = r.enhanced;
        in.est_mask = r.mask.binary;
        Waveform noise = u.noisy;
        for (std::size_t k = 0; k < noise.size(); ++k) noise.samples[k] -= u.clean.samples[k];
        const auto& p = model->config().stft;
        in.ref_mask = ibm(stft_padded(u.clean.samples, p), stft_padded(noise.samples, p));
      } else {
        enh_path = (fs::path(a.enhanced_dir) / (e.utt + ".wav")).string();
        in.enhanced = read_wav(enh_path);
      }
      EvalRow row = evaluate_item(in);
      if (!a.pesq_cmd.empty()) {
        if (enh_path.empty()) {
          enh_path = (fs::temp_directory_path() / ("avse_pesq_" + e.utt + ".wav")).string();
          write_wav(enh_path, in.enhanced);
        }
        row.pesq = run_pesq_hook(a.pesq_cmd, (corpus.root / e.clean).string(), enh_path);
        if (use_model) fs::remove(enh_path);
      }
      rows[i] = row;
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });

  std::vector<EvalRow> ok;
  std::vector<EvalItemError> failed;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (rows[i]) ok.push_back(*rows[i]);
    else failed.push_back({entries[i].utt, errors[i]});
  }
  const auto rep = summarize(std::move(ok), std::move(failed));
  if (rep.rows.empty()) {
    for (const auto& f : rep.errors) std::cerr << "item " << f.utt << " failed: " << f.message << "\n";
    std::cerr << "avse: eval: no item could be scored\n";
    return 1;
  }
  std::ostringstream csv;
  write_report_csv(csv, rep);
  if (a.out.empty()) std::cout << csv.str();
  else write_text(a.out, csv.str());
  for (const auto& f : rep.errors) std::cerr << "item " << f.utt << " failed: " << f.message << "\n";
  std::cerr << "mean si_sdr noisy " << format_number(rep.overall.si_sdr_noisy) << " enhanced "
            << format_number(rep.overall.si_sdr_enh) << " (" << rep.rows.size() << " items)\n";
  return rep.errors.empty() ? 0 : 2;
}

// ---------------------------------------------------------------- mask-eval

struct MaskEvalArgs {
  std::string est, ref, corpus, split = "test", out;
};

void print_score(std::ostream& os, const std::string& utt, const MaskScore& s) {
  os << utt << ',' << format_number(s.hit) << ',' << format_number(s.fa) << ',' << format_number(s.hit_minus_fa)
     << ',' << format_number(s.accuracy) << '\n';
}

template <typename T>
int cmd_mask_eval(const Globals& g, const MaskEvalArgs& a) {
  std::ostringstream out;
  out << "utt,hit,fa,hit_fa,acc\n";
  int status = 0;
  if (!a.est.empty()) {
    if (a.ref.empty()) throw UsageError("mask-eval: need both EST and REF mask files");
    const auto s = hit_fa(decode_msk(read_file(a.est)), decode_msk(read_file(a.ref)));
    print_score(out, fs::path(a.est).stem().string(), s);
  } else {
    if (a.corpus.empty()) throw UsageError("mask-eval: give EST REF mask files or --corpus");
    const auto c = resolve_configs(g);
    const auto model = load_or_init<T>(g, c);
    const auto corpus = load_corpus(a.corpus);
    std::vector<MaskScore> scores;
    for (const auto& e : corpus.split(a.split)) {
      try {
        const auto u = load_utterance(corpus, e);
        const auto r = model.enhance(u.noisy, u.visual, MaskMode::kBinary);
        Waveform noise = u.noisy;
        for (std::size_t k = 0; k < noise.size(); ++k) noise.samples[k] -= u.clean.samples[k];
        const auto& p = model.config().stft;
        const auto s = hit_fa(r.mask.binary, ibm(stft_padded(u.clean.samples, p), stft_padded(noise.samples, p)));
        print_score(out, e.utt, s);
        scores.push_back(s);
      } catch (const std::exception& ex) {
        std::cerr << "item " << e.utt << " failed: " << ex.what() << "\n";
        status = 2;
      }
    }
    if (scores.empty()) return 1;
    MaskScore m;
    for (const auto& s : scores) {
      m.hit += s.hit / static_cast<double>(scores.size());
      m.fa += s.fa / static_cast<double>(scores.size());
      m.accuracy += s.accuracy / static_cast<double>(scores.size());
    }
    m.hit_minus_fa = m.hit - m.fa;
    print_score(out, "ALL", m);
  }
  if (a.out.empty()) std::cout << out.str();
  else write_text(a.out, out.str());
  return status;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  double duration = 4.0, chunk = 0.5;
  std::size_t reps = 3;
  std::string out;
};

constexpr double kReferenceParams = 5.90e6;

template <typename T>
int cmd_bench(const Globals& g, const BenchArgs& a) {
  const auto c = resolve_configs(g);
  const auto model = load_or_init<T>(g, c);
  const auto r = bench_model(model, a.duration, a.reps, a.chunk);
  std::ostringstream js;
  write_bench_json(js, r);
  if (a.out.empty()) std::cout << js.str();
  else write_text(a.out, js.str());
  const double dev = 100.0 * (static_cast<double>(r.param_count) - kReferenceParams) / kReferenceParams;
  std::cerr << "preset " << model.config().preset << ": " << r.param_count << " parameters ("
            << format_number(dev) << "% vs 5.90M reference), " << r.weight_bytes_f32 << " weight bytes at f32, rtf "
            << format_number(r.rtf) << "\n";
  return 0;
}

// ---------------------------------------------------------------- diag

struct DiagArgs {
  std::string wav, visual, out;
  int max_lag = 10;
  bool plot = false;
};

template <typename T>
int cmd_diag(const Globals& g, const DiagArgs& a) {
  const auto c = resolve_configs(g);
  const auto model = load_or_init<T>(g, c);
  const auto& mc = model.config();
  const auto noisy = read_wav(a.wav);
  const auto vis = read_visual_for(a.visual, mc);
  NoGradGuard guard;
  auto z = model.audio_encoder().forward(Tensor<T>({1, noisy.size()}, std::vector<T>(noisy.samples.begin(), noisy.samples.end())));
  const std::size_t C = z.dim(1), Tl = z.dim(2);
  FeatureStream latent{Tl, C, std::vector<double>(Tl * C)};
  for (std::size_t ch = 0; ch < C; ++ch)
    for (std::size_t t = 0; t < Tl; ++t) latent.values[t * C + ch] = static_cast<double>(z.data()[ch * Tl + t]);
  auto vf = model.visual_features(vis);
  FeatureStream visual{vf.dim(0), vf.dim(1), std::vector<double>(vf.data().begin(), vf.data().end())};
  const double latent_per_frame = static_cast<double>(kSampleRate) / mc.fps / static_cast<double>(mc.enc_stride);
  const auto audio = pool_to_frames(latent, visual.frames, latent_per_frame);
  const auto rep = diag_crossmodal(audio, visual, a.max_lag);
  fs::create_directories(a.out);
  std::ostringstream corr, lag;
  write_corr_csv(corr, rep);
  write_lag_csv(lag, rep);
  write_text(fs::path(a.out) / "corr.csv", corr.str());
  write_text(fs::path(a.out) / "lag.csv", lag.str());
  if (a.plot) write_heatmap_pgm(fs::path(a.out) / "corr.pgm", rep);
  std::cout << "peak lag " << rep.peak_lag << " frames\n";
  return 0;
}

template <typename Fn>
int dispatch(const Globals& g, Fn&& fn) {
  return parse_precision(g.precision) == Precision::kF64 ? fn(double{}) : fn(float{});
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& s : args) argv.push_back(const_cast<char*>(s.c_str()));
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Audio-visual speech enhancement toolkit", "avse"};
  Globals g;
  app.add_option("--config", g.config_path, "JSON file with \"model\" and/or \"train\" sections");
  app.add_option("--preset", g.preset, "paper | tiny")->check(CLI::IsMember({"paper", "tiny"}));
  app.add_option("--seed", g.seed, "seed for initialization, data and training");
  app.add_option("--precision", g.precision, "f32 | f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--mask-mode", g.mask_mode, "soft | binary | off")->check(CLI::IsMember({"soft", "binary", "off"}));
  app.add_option("--ckpt", g.ckpt, "checkpoint to load (its config overrides --preset/--config)");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("-o,--out", sa.out, "output directory")->required();
  synth->add_option("--train", sa.n_train);
  synth->add_option("--val", sa.n_val);
  synth->add_option("--test", sa.n_test);
  synth->add_option("--duration", sa.duration, "seconds per utterance");
  synth->add_option("--snr-lo", sa.snr_lo);
  synth->add_option("--snr-hi", sa.snr_hi);
  synth->add_option("--noise", sa.noise, "white | babble | wav");
  synth->add_option("--noise-wav", sa.noise_wav, "noise source for --noise wav");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train on a corpus");
  trn->add_option("--corpus", ta.corpus)->required();
  trn->add_option("-o,--out", ta.out, "directory for checkpoints and the loss curve")->required();
  trn->add_option("--epochs", ta.epochs);
  trn->add_option("--lr", ta.lr);
  trn->add_flag("--resume", ta.resume, "continue from OUT/last.ckpt");

  EnhanceArgs ea;
  auto* enh = app.add_subcommand("enhance", "enhance one noisy WAV");
  enh->add_option("wav", ea.wav)->required();
  enh->add_option("visual", ea.visual, ".vft or .vfr file")->required();
  enh->add_option("-o,--out", ea.out)->required();
  enh->add_option("--raw-out", ea.raw_out, "also write the decoder output");
  enh->add_option("--mask-out", ea.mask_out, "also write the estimated binary mask (.msk)");

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "score a corpus split");
  ev->add_option("--corpus", va.corpus)->required();
  ev->add_option("--split", va.split);
  ev->add_option("-o,--out", va.out, "report CSV (default stdout)");
  ev->add_option("--enhanced-dir", va.enhanced_dir, "score existing <utt>.wav files instead of running the model");
  ev->add_option("--pesq-cmd", va.pesq_cmd, "external command: CMD ref.wav deg.wav -> score");

  MaskEvalArgs ma;
  auto* me = app.add_subcommand("mask-eval", "HIT/FA against the ideal binary mask");
  me->add_option("est", ma.est, "estimated .msk");
  me->add_option("ref", ma.ref, "reference .msk");
  me->add_option("--corpus", ma.corpus);
  me->add_option("--split", ma.split);
  me->add_option("-o,--out", ma.out);

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "parameter count, memory and real-time factor");
  be->add_option("--duration", ba.duration, "seconds of audio");
  be->add_option("--reps", ba.reps);
  be->add_option("--chunk", ba.chunk, "streaming chunk length in seconds (0 = off)");
  be->add_option("-o,--out", ba.out, "report JSON (default stdout)");

  DiagArgs da;
  auto* dg = app.add_subcommand("diag", "audio/visual frame correlation and lag curve");
  dg->add_option("wav", da.wav)->required();
  dg->add_option("visual", da.visual)->required();
  dg->add_option("-o,--out", da.out)->required();
  dg->add_option("--max-lag", da.max_lag);
  dg->add_flag("--plot", da.plot, "also write corr.pgm");

  for (auto* s : {synth, trn, enh, ev, me, be, dg}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(g, sa);
    if (*trn) return dispatch(g, [&](auto t) { return cmd_train<decltype(t)>(g, ta); });
    if (*enh) return dispatch(g, [&](auto t) { return cmd_enhance<decltype(t)>(g, ea); });
    if (*ev) return dispatch(g, [&](auto t) { return cmd_eval<decltype(t)>(g, va); });
    if (*me) return dispatch(g, [&](auto t) { return cmd_mask_eval<decltype(t)>(g, ma); });
    if (*be) return dispatch(g, [&](auto t) { return cmd_bench<decltype(t)>(g, ba); });
    if (*dg) return dispatch(g, [&](auto t) { return cmd_diag<decltype(t)>(g, da); });
  } catch (const std::exception& e) {
    std::cerr << "avse: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace avse
