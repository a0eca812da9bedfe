// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "avse/dsp.hpp"
#include "avse/encoders.hpp"

namespace avse {

enum class NoiseKind { kWhite, kBabble, kWav };
NoiseKind parse_noise_kind(const std::string& s);
std::string to_string(NoiseKind k);

// Speech surrogate: 3-5 harmonics of a slowly drifting f0 sharing one
// syllabic envelope e(t) in [0, 1]. The visual stream at 25 fps carries
//   [e(t_k), de/dt(t_k) / 10, w_1..w_5, (f0 - 100) / 150, e sampled across
//    the frame interval ...]
// truncated or zero-padded to visual_dim.
struct SynthSpec {
  std::uint64_t seed = 0;
  double duration_s = 2.0;
  double snr_lo_db = -10.0;
  double snr_hi_db = 10.0;
  NoiseKind noise = NoiseKind::kWhite;
  std::vector<double> noise_wav;  // kWav source, looped as needed
  std::size_t visual_dim = 32;
  double fps = 25.0;
  int rate = kSampleRate;

  void validate() const;  // ConfigError
};

struct SynthItem {
  std::string cond;     // noise kind name
  double snr_db = 0;
  Waveform clean, noise, noisy;
  std::vector<double> envelope;  // e(t) per sample
  VisualStream visual;
};

// Item `index` of the stream defined by spec.seed; independent of which
// other items are generated.
SynthItem synth_item(const SynthSpec& spec, std::uint64_t index);
std::vector<SynthItem> synth_batch(const SynthSpec& spec, std::size_t n, std::uint64_t first_index = 0);

// Scales `noise` so that 10 log10(|clean|^2 / |noise|^2) == snr_db.
std::vector<double> scale_to_snr(const std::vector<double>& clean, const std::vector<double>& noise, double snr_db);
double snr_db(const std::vector<double>& clean, const std::vector<double>& noise);

// Visual frames for `samples` audio samples: floor(samples * fps / rate) + 1.
std::size_t visual_frame_count(std::size_t samples, double fps, int rate);

}  // namespace avse
