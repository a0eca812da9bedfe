// SPDX-License-Identifier: Apache-2.0

#include "avse/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "avse/error.hpp"
#include "avse/ops.hpp"
#include "avse/synth.hpp"

namespace avse {

Timing time_callable(const std::function<void()>& fn, std::size_t reps, std::size_t warmup) {
  if (reps == 0) throw ConfigError("bench: reps must be positive");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t(reps);
  for (auto& v : t) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    v = std::chrono::duration<double>(std::chrono::steady_clock::now() - a).count();
  }
  std::sort(t.begin(), t.end());
  Timing r;
  r.median_s = reps % 2 ? t[reps / 2] : 0.5 * (t[reps / 2 - 1] + t[reps / 2]);
  r.mean_s = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(reps);
  r.p95_s = t[std::min(reps - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(reps))) - 1)];
  return r;
}

double bench_rtf(const std::function<void()>& fn, double audio_s, std::size_t reps, std::size_t warmup) {
  if (!(audio_s > 0.0)) throw ConfigError("bench: audio duration must be positive");
  return time_callable(fn, reps, warmup).median_s / audio_s;
}

std::size_t activation_estimate(const ModelConfig& cfg, std::size_t samples, std::size_t bpe) {
  const std::size_t t = (samples - cfg.enc_kernel) / cfg.enc_stride + 1;
  const std::size_t C = cfg.enc_channels;
  const std::size_t S = chunk_count(t, cfg.chunk_len), L = cfg.chunk_len;
  // Attention phase: encoder output, X_a, Q/K/V, scores and their softmax.
  const std::size_t attn = 2 * C * t + 3 * C * t + 2 * cfg.heads * t * t + C * t;
  // Separator phase: fused input, chunked tensor, GRU output, norm output,
  // gate buffer of the recurrence.
  const std::size_t sep = C * t + 3 * S * L * C + 3 * S * L * cfg.sep_hidden;
  // Decoder phase.
  const std::size_t dec = cfg.sep_proj * t + 2 * samples;
  return (samples + std::max({attn, sep, dec})) * bpe;
}

template <typename T>
BenchReport bench_model(const AvseModel<T>& model, double duration_s, std::size_t reps, double chunk_s,
                        std::size_t warmup) {
  const auto& cfg = model.config();
  BenchReport r;
  r.param_count = model.param_count();
  r.weight_bytes = r.param_count * sizeof(T);
  r.weight_bytes_f32 = r.param_count * sizeof(float);
  r.precision = sizeof(T) == 4 ? "f32" : "f64";
  r.duration_s = duration_s;
  r.reps = reps;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  r.peak_activation_bytes = activation_estimate(cfg, n, sizeof(T));

  Rng rng(1234);
  Waveform audio;
  for (std::size_t i = 0; i < n; ++i) audio.samples.push_back(0.1 * rng.normal());
  const std::size_t frames = visual_frame_count(n, cfg.fps, kSampleRate);
  auto vis = VisualStream::features(frames, cfg.visual_dim, cfg.fps, std::vector<float>(frames * cfg.visual_dim, 0.5f));
  r.rtf = bench_rtf([&] { (void)model.enhance(audio, vis, MaskMode::kBinary); }, duration_s, reps, warmup);

  if (chunk_s > 0.0) {
    const auto cn = static_cast<std::size_t>(std::llround(chunk_s * kSampleRate));
    Waveform chunk;
    chunk.samples.assign(audio.samples.begin(), audio.samples.begin() + static_cast<std::ptrdiff_t>(std::min(cn, n)));
    const std::size_t cf = visual_frame_count(chunk.size(), cfg.fps, kSampleRate);
    auto cv = VisualStream::features(cf, cfg.visual_dim, cfg.fps, std::vector<float>(cf * cfg.visual_dim, 0.5f));
    const auto t = time_callable([&] { (void)model.enhance(chunk, cv, MaskMode::kBinary); },
                                 std::max<std::size_t>(reps, 5), warmup);
    r.chunk_s = chunk_s;
    r.latency_mean_ms = 1e3 * t.mean_s;
    r.latency_p95_ms = 1e3 * t.p95_s;
  }
  return r;
}

void write_bench_json(std::ostream& os, const BenchReport& r) {
  nlohmann::json j{{"param_count", r.param_count},
                   {"weight_bytes", r.weight_bytes},
                   {"weight_bytes_f32", r.weight_bytes_f32},
                   {"peak_activation_bytes", r.peak_activation_bytes},
                   {"precision", r.precision},
                   {"duration_s", r.duration_s},
                   {"reps", r.reps},
                   {"rtf", r.rtf},
                   {"chunk_s", r.chunk_s},
                   {"latency_mean_ms", r.latency_mean_ms},
                   {"latency_p95_ms", r.latency_p95_ms}};
  os << j.dump(2) << "\n";
}

template BenchReport bench_model(const AvseModel<float>&, double, std::size_t, double, std::size_t);
template BenchReport bench_model(const AvseModel<double>&, double, std::size_t, double, std::size_t);

}  // namespace avse
