// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "avse/config.hpp"
#include "avse/dsp.hpp"
#include "avse/gru.hpp"
#include "avse/params.hpp"
#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse {

// Dropout settings for one forward pass. `rng` is only read when training.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

// Intra-chunk GRU along L, then inter-chunk GRU along S. Each path is
// GRU -> dropout -> layer norm, added back onto its input.
template <typename T>
struct DualPathBlock {
  GruParams<T> intra, inter;
  Tensor<T> intra_gamma, intra_beta, inter_gamma, inter_beta;  // [C]

  static DualPathBlock init(std::size_t channels, Rng& rng);
  // [B x S x L x C] -> same shape.
  Tensor<T> forward(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct Separator {
  std::size_t chunk_len = 64;
  std::vector<DualPathBlock<T>> blocks;
  Tensor<T> proj;  // [C x P], the 1x1 conv

  static Separator init(const ModelConfig& cfg, Rng& rng);
  // [B x C x T^] -> [B x P x T^], nonnegative.
  Tensor<T> forward(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(ParamList<T>& out) const;
};

template <typename T>
struct Decoder {
  Tensor<T> weight;  // [P x 1 x K]
  std::size_t stride = 8;

  static Decoder init(const ModelConfig& cfg, Rng& rng);
  // [B x P x T^] -> [B x length]
  Tensor<T> forward(const Tensor<T>& x, std::size_t length) const;
  void collect(ParamList<T>& out) const;
};

enum class MaskMode { kSoft, kBinary, kOff };
MaskMode parse_mask_mode(const std::string& s);
std::string to_string(MaskMode m);

struct EstimatedMask {
  RealMask soft;
  BinaryMask binary;
};

// soft = clip(|S| / max(|Y|, eps), 0, 1), binary = soft > threshold, on
// the padded STFT grid of stft_padded.
EstimatedMask estimate_mask(const Waveform& s_raw, const Waveform& noisy, const StftParams& p,
                            double eps = 1e-8, double threshold = 0.5);

// Masked noisy magnitude with noisy phase, same length as `noisy`.
// kOff is rejected here; callers use s_raw directly in that mode.
Waveform reconstruct(const Waveform& noisy, const EstimatedMask& m, const StftParams& p, MaskMode mode);

}  // namespace avse
