// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "avse/tensor.hpp"

namespace avse {

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / rate; }
};

enum class WindowKind { kHann, kRectangular };

struct StftParams {
  std::size_t window_len = 512;
  std::size_t hop = 256;
  WindowKind window = WindowKind::kHann;
};

// Periodic window of length window_len.
std::vector<double> make_window(const StftParams& p);
// Shifted copies of the window at multiples of hop sum to a constant.
bool satisfies_cola(const StftParams& p, double rel_tol = 1e-10);

struct SpectroGram {
  std::size_t frames = 0;
  std::size_t bins = 0;  // window_len / 2 + 1
  std::vector<std::complex<double>> values;  // frame-major
  StftParams params;

  std::complex<double>& at(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  const std::complex<double>& at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
};

struct BinaryMask {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
};

// Real-valued time-frequency gain in [0, 1].
struct RealMask {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;

  static RealMask from_binary(const BinaryMask& m);
};

// frames = floor((len - window_len) / hop) + 1, windowed real DFT per frame.
SpectroGram stft(std::span<const double> x, const StftParams& p);
inline SpectroGram stft(const Waveform& w, const StftParams& p) { return stft(w.samples, p); }

// Weighted overlap-add with the analysis window as synthesis window and
// per-sample normalization by the summed squared window. Output length is
// (frames - 1) * hop + window_len. Throws ConfigError for non-COLA params.
Waveform istft(const SpectroGram& s, int rate = kSampleRate);

// Samples [first, second) of an istft output of `length` samples that every
// frame overlap covers; edges outside it are not guaranteed to reconstruct.
std::pair<std::size_t, std::size_t> istft_interior(const StftParams& p, std::size_t length);

// Full-length analysis/synthesis: the signal is zero-padded by
// window_len - hop in front and enough at the back that every original
// sample lies in the istft interior; istft_trimmed undoes the padding.
SpectroGram stft_padded(std::span<const double> x, const StftParams& p);
Waveform istft_trimmed(const SpectroGram& s, std::size_t length, int rate = kSampleRate);

// 1 where |clean| > |noise| strictly, else 0.
BinaryMask ibm(const SpectroGram& clean, const SpectroGram& noise);

// Magnitude scaled by the mask, phase kept. Throws DomainError for gains
// outside [0, 1].
SpectroGram apply_mask(const SpectroGram& noisy, const RealMask& m);

inline constexpr double kSdrCapDb = 60.0;
inline constexpr double kLossClipDb = -30.0;

enum class SdrForm {
  kScaleInvariant,  // target rescaled by the optimal projection
  kPlain,           // 10 log10(|x|^2 / |x - xhat|^2), no rescaling
};

// Unclipped value: +inf for a perfect estimate, -inf for a zero projection.
// Throws UndefinedReferenceError when x is all zero.
double si_sdr(std::span<const double> x, std::span<const double> xhat,
              SdrForm form = SdrForm::kScaleInvariant);
inline double si_sdr(const Waveform& x, const Waveform& xhat,
                     SdrForm form = SdrForm::kScaleInvariant) {
  return si_sdr(x.samples, xhat.samples, form);
}
// Reporting form: clamped to [-cap, +cap].
double si_sdr_capped(std::span<const double> x, std::span<const double> xhat,
                     SdrForm form = SdrForm::kScaleInvariant);

// Batch loss on [B x T] tensors: mean over items of -clamp(si_sdr, -30, cap).
// Gradients vanish for items sitting on either clip.
template <typename T>
Tensor<T> si_sdr_loss(const Tensor<T>& clean, const Tensor<T>& estimate);

}  // namespace avse
