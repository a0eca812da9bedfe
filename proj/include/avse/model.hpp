// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avse/config.hpp"
#include "avse/dsp.hpp"
#include "avse/encoders.hpp"
#include "avse/params.hpp"
#include "avse/separator.hpp"
#include "avse/xattn.hpp"

namespace avse {

// Precision-neutral copy of one weight array, as stored in checkpoints.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct EnhanceResult {
  Waveform raw;       // decoder output
  Waveform enhanced;  // masked noisy STFT, or `raw` when the mask is off
  EstimatedMask mask;
};

// encoder -> visual-biased attention (residual) -> dual-path separator ->
// transposed-conv decoder.
template <typename T>
class AvseModel {
 public:
  static AvseModel init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // wave [B x T], per-frame visual features [B x N x d_v] -> s_raw [B x T].
  Tensor<T> forward(const Tensor<T>& wave, const Tensor<T>& visual, const ForwardMode& mode = {}) const;

  // Per-frame features [N x d_v] for either stream mode.
  Tensor<T> visual_features(const VisualStream& v) const { return visual_.encode(v); }

  // Single utterance inference; no tape is recorded.
  EnhanceResult enhance(const Waveform& noisy, const VisualStream& v, MaskMode mode) const;

  ParamList<T> parameters() const;
  ParamList<T> trainable_parameters() const;
  std::size_t param_count() const { return total_elements(parameters()); }

  std::vector<NamedArray> export_state() const;
  // Names and shapes must match exactly; FormatError otherwise.
  void import_state(const std::vector<NamedArray>& arrays);

  const AudioEncoder<T>& audio_encoder() const { return audio_; }
  const AttentionState<T>& attention() const { return attn_; }
  const Separator<T>& separator() const { return sep_; }
  const Decoder<T>& decoder() const { return dec_; }

 private:
  void start_near_identity();

  ModelConfig cfg_;
  AudioEncoder<T> audio_;
  VisualEncoder<T> visual_;
  AttentionState<T> attn_;
  Separator<T> sep_;
  Decoder<T> dec_;
};

// Same weights at another precision.
template <typename To, typename From>
AvseModel<To> cast_model(const AvseModel<From>& m) {
  auto out = AvseModel<To>::init(m.config(), 0);
  out.import_state(m.export_state());
  return out;
}

}  // namespace avse
