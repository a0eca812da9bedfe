// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avse/config.hpp"
#include "avse/params.hpp"
#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse {

// floor((samples - K) / stride) + 1; SignalTooShortError when samples < K.
std::size_t encoded_length(std::size_t samples, const ModelConfig& cfg);

// 1-D conv filterbank followed by ReLU. Bias-free, so silence maps to zero.
template <typename T>
struct AudioEncoder {
  Tensor<T> weight;  // [C x 1 x K]
  std::size_t stride = 8;

  static AudioEncoder init(const ModelConfig& cfg, Rng& rng);
  // [B x T] -> [B x C x T^]
  Tensor<T> forward(const Tensor<T>& wave) const;
  void collect(ParamList<T>& out) const;
};

// Per-frame visual input: either grayscale frames (count x height x width,
// values in [0, 1]) or precomputed features (count x dim).
struct VisualStream {
  enum class Mode { kFrames, kFeatures };
  Mode mode = Mode::kFeatures;
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  double fps = 25.0;
  std::vector<float> values;

  static VisualStream features(std::size_t count, std::size_t dim, double fps, std::vector<float> values);
  static VisualStream frames(std::size_t count, std::size_t height, std::size_t width, double fps,
                             std::vector<float> values);
};

// ".vft": "VFT1", u32 N, u32 d_v, f32 fps, N*d_v f32 row-major.
std::vector<std::uint8_t> encode_vft(const VisualStream& v);
VisualStream decode_vft(std::span<const std::uint8_t> bytes);
// ".vfr": "VFR1", u32 N, u32 H, u32 W, N*H*W f32 in [0, 1]. Carries no fps;
// the decoder assigns `fps`.
std::vector<std::uint8_t> encode_vfr(const VisualStream& v);
VisualStream decode_vfr(std::span<const std::uint8_t> bytes, double fps = 25.0);

VisualStream read_visual(const std::filesystem::path& path);
void write_visual(const std::filesystem::path& path, const VisualStream& v);

// Frames-mode trunk: 3-D front-end conv (kt x ks x ks, spatial stride 2,
// replicate padding in time), 3x3/2 max-pool, four residual stages of two
// 3x3 convs each (stride 1, 2, 2, 2; 1x1 projection shortcuts where the
// shape changes), global average pool, linear to d_v. Inference only.
template <typename T>
class VisualEncoder {
 public:
  static VisualEncoder init(const ModelConfig& cfg, Rng& rng);

  // -> [N x d_v]. Features mode returns the stored values unchanged after
  // checking d_v; frames mode requires frame_size x frame_size input.
  Tensor<T> encode(const VisualStream& v) const;
  void collect(ParamList<T>& out) const;

  struct Residual {
    Tensor<T> conv1, conv2, shortcut;  // shortcut empty (numel 1, unused) when identity
    std::size_t stride = 1;
    bool project = false;
  };

 private:
  ModelConfig cfg_;
  Tensor<T> front_;  // [c0 x kt x ks x ks]
  std::vector<Residual> stages_;
  Tensor<T> head_;   // [c3 x d_v]
};

// [B x N x d_v] -> [B x T^ x d_v] by linear interpolation; first and last
// frames land on the first and last latent frames.
template <typename T>
Tensor<T> temporal_align(const Tensor<T>& per_frame, std::size_t target_len);

// Per-frame visual tensor [1 x N x d_v] from a features-mode stream.
template <typename T>
Tensor<T> visual_tensor(const VisualStream& v);

}  // namespace avse
