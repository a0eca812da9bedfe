// SPDX-License-Identifier: Apache-2.0

#include "avse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "avse/error.hpp"
#include "avse/rng.hpp"

namespace avse {

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "white") return NoiseKind::kWhite;
  if (s == "babble") return NoiseKind::kBabble;
  if (s == "wav") return NoiseKind::kWav;
  throw ConfigError("unknown noise kind '" + s + "' (expected white, babble or wav)");
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kWhite: return "white";
    case NoiseKind::kBabble: return "babble";
    case NoiseKind::kWav: return "wav";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (!std::isfinite(snr_lo_db) || !std::isfinite(snr_hi_db) || snr_lo_db > snr_hi_db)
    throw ConfigError("synth: invalid SNR range [" + std::to_string(snr_lo_db) + ", " + std::to_string(snr_hi_db) +
                      "]");
  if (!(duration_s > 0.0)) throw ConfigError("synth: duration must be positive");
  if (rate <= 0 || !(fps > 0.0)) throw ConfigError("synth: rate and fps must be positive");
  if (visual_dim < 2) throw ConfigError("synth: visual_dim must be >= 2");
  if (noise == NoiseKind::kWav && noise_wav.empty()) throw ConfigError("synth: wav noise needs samples");
}

std::size_t visual_frame_count(std::size_t samples, double fps, int rate) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(samples) * fps / rate)) + 1;
}

double snr_db(const std::vector<double>& clean, const std::vector<double>& noise) {
  double s = 0.0, n = 0.0;
  for (double v : clean) s += v * v;
  for (double v : noise) n += v * v;
  return 10.0 * std::log10(s / n);
}

std::vector<double> scale_to_snr(const std::vector<double>& clean, const std::vector<double>& noise, double snr) {
  double s = 0.0, n = 0.0;
  for (double v : clean) s += v * v;
  for (double v : noise) n += v * v;
  if (!(n > 0.0)) throw DomainError("scale_to_snr: noise is silent");
  const double g = std::sqrt(s / (n * std::pow(10.0, snr / 10.0)));
  std::vector<double> out(noise.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = noise[i] * g;
  return out;
}

namespace {

struct Voice {
  std::vector<double> signal;
  std::vector<double> envelope;
  std::vector<double> weights;  // 5 slots, trailing zeros for absent harmonics
  double f0 = 0;
};

// Syllable-like bumps sin^2 with random heights separated by short pauses,
// peak-normalized to 1.
std::vector<double> make_envelope(std::size_t n, int rate, Rng& rng) {
  std::vector<double> e(n, 0.0);
  double t = rng.uniform(0.0, 0.15);
  const double total = static_cast<double>(n) / rate;
  while (t < total) {
    const double dur = rng.uniform(0.15, 0.35);
    const double amp = rng.uniform(0.5, 1.0);
    const auto a = static_cast<std::size_t>(t * rate);
    const auto b = std::min(n, static_cast<std::size_t>((t + dur) * rate));
    for (std::size_t i = a; i < b; ++i) {
      const double u = (static_cast<double>(i) / rate - t) / dur;
      const double s = std::sin(std::numbers::pi * u);
      e[i] = std::max(e[i], amp * s * s);
    }
    t += dur + rng.uniform(0.05, 0.2);
  }
  const double peak = *std::max_element(e.begin(), e.end());
  if (peak > 0.0)
    for (auto& v : e) v /= peak;
  return e;
}

Voice make_voice(std::size_t n, int rate, Rng& rng) {
  Voice v;
  v.envelope = make_envelope(n, rate, rng);
  v.f0 = rng.uniform(100.0, 250.0);
  const std::size_t harmonics = 3 + static_cast<std::size_t>(rng.below(3));
  v.weights.assign(5, 0.0);
  for (std::size_t h = 0; h < harmonics; ++h) v.weights[h] = rng.uniform(0.3, 1.0) / static_cast<double>(h + 1);
  std::vector<double> phase(harmonics);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double drift_rate = rng.uniform(0.3, 1.0), drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  v.signal.assign(n, 0.0);
  double theta = 0.0;  // integrated fundamental phase
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = v.f0 * (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * drift_rate * t + drift_phase));
    double s = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h) s += v.weights[h] * std::sin(static_cast<double>(h + 1) * theta + phase[h]);
    v.signal[i] = 0.5 * v.envelope[i] * s;
    theta += 2.0 * std::numbers::pi * f / rate;
  }
  return v;
}

std::vector<double> make_noise(const SynthSpec& spec, std::size_t n, Rng& rng) {
  std::vector<double> out(n, 0.0);
  switch (spec.noise) {
    case NoiseKind::kWhite:
      for (auto& v : out) v = rng.normal();
      break;
    case NoiseKind::kBabble:
      for (int k = 0; k < 4; ++k) {
        const auto voice = make_voice(n, spec.rate, rng);
        for (std::size_t i = 0; i < n; ++i) out[i] += voice.signal[i];
      }
      break;
    case NoiseKind::kWav: {
      const std::size_t start = static_cast<std::size_t>(rng.below(spec.noise_wav.size()));
      for (std::size_t i = 0; i < n; ++i) out[i] = spec.noise_wav[(start + i) % spec.noise_wav.size()];
      break;
    }
  }
  return out;
}

std::vector<float> visual_features(const Voice& v, std::size_t frames, const SynthSpec& spec) {
  const std::size_t n = v.envelope.size();
  const double spf = spec.rate / spec.fps;  // samples per frame
  auto env_at = [&](double pos) {
    const double p = std::clamp(pos, 0.0, static_cast<double>(n - 1));
    const auto i = static_cast<std::size_t>(p);
    const double fr = p - static_cast<double>(i);
    return i + 1 < n ? v.envelope[i] * (1.0 - fr) + v.envelope[i + 1] * fr : v.envelope[i];
  };
  const std::size_t d = spec.visual_dim;
  std::vector<float> out(frames * d, 0.0f);
  for (std::size_t k = 0; k < frames; ++k) {
    const double pos = static_cast<double>(k) * spf;
    std::vector<double> f;
    f.push_back(env_at(pos));
    const double h = 16.0;  // 1 ms central difference
    f.push_back((env_at(pos + h) - env_at(pos - h)) / (2.0 * h / spec.rate) / 10.0);
    for (double w : v.weights) f.push_back(w);
    f.push_back((v.f0 - 100.0) / 150.0);
    const std::size_t rest = d > f.size() ? d - f.size() : 0;
    for (std::size_t j = 0; j < rest; ++j)
      f.push_back(env_at(pos + spf * (static_cast<double>(j + 1) / static_cast<double>(rest + 1) - 0.5)));
    for (std::size_t j = 0; j < d; ++j) out[k * d + j] = static_cast<float>(f[j]);
  }
  return out;
}

}  // namespace

SynthItem synth_item(const SynthSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng = Rng::derive(spec.seed, {0x5157, index});
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.rate));
  if (n < 2) throw ConfigError("synth: duration too short");
  SynthItem it;
  it.cond = to_string(spec.noise);
  it.snr_db = rng.uniform(spec.snr_lo_db, spec.snr_hi_db);
  auto voice = make_voice(n, spec.rate, rng);
  auto noise = scale_to_snr(voice.signal, make_noise(spec, n, rng), it.snr_db);
  it.clean.rate = it.noise.rate = it.noisy.rate = spec.rate;
  it.noisy.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) it.noisy.samples[i] = voice.signal[i] + noise[i];
  const std::size_t frames = visual_frame_count(n, spec.fps, spec.rate);
  it.visual = VisualStream::features(frames, spec.visual_dim, spec.fps, visual_features(voice, frames, spec));
  it.clean.samples = std::move(voice.signal);
  it.noise.samples = std::move(noise);
  it.envelope = std::move(voice.envelope);
  return it;
}

std::vector<SynthItem> synth_batch(const SynthSpec& spec, std::size_t n, std::uint64_t first_index) {
  std::vector<SynthItem> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_item(spec, first_index + i));
  return out;
}

}  // namespace avse
