// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "avse/dsp.hpp"

namespace avse {

enum class Precision { kF32, kF64 };

// Every architectural hyperparameter. Presets: "paper" and "tiny".
struct ModelConfig {
  std::string preset = "paper";

  // audio encoder / decoder
  std::size_t enc_channels = 256;  // C, also the attention width d_a
  std::size_t enc_kernel = 16;
  std::size_t enc_stride = 8;

  // visual front end
  std::size_t visual_dim = 256;    // d_v
  std::size_t frame_size = 224;    // square frames, frames mode only
  std::array<std::size_t, 4> visual_channels{32, 64, 128, 256};
  std::size_t front_kernel_t = 5;
  std::size_t front_kernel_s = 7;
  double fps = 25.0;

  // cross-attention
  std::size_t heads = 8;

  // separator
  std::size_t sep_blocks = 6;
  std::size_t sep_hidden = 256;
  std::size_t sep_proj = 128;
  std::size_t chunk_len = 64;
  double dropout = 0.3;

  // mask estimation
  StftParams stft{};
  double mask_threshold = 0.5;
  double mask_eps = 1e-8;

  static ModelConfig paper();
  static ModelConfig tiny();
  static ModelConfig preset_named(const std::string& name);

  std::size_t head_dim() const { return enc_channels / heads; }
  // Throws ConfigError on inconsistent values.
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 16;
  double rms_alpha = 0.99;
  double rms_eps = 1e-8;
  double plateau_factor = 0.8;
  std::size_t plateau_patience = 5;
  double plateau_threshold = 1e-4;
  std::size_t epochs = 30;
  std::size_t segment_len = 16000;  // samples per random training crop
  double loss_clip_db = kLossClipDb;
  std::uint64_t seed = 0;

  static TrainConfig paper();
  static TrainConfig tiny();
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Applies the keys present in `j` on top of `base`; unknown keys are a
// ConfigError.
ModelConfig merge_model_config(const ModelConfig& base, const nlohmann::json& j);
TrainConfig merge_train_config(const TrainConfig& base, const nlohmann::json& j);

// 64-bit FNV-1a of the canonical JSON of the config.
std::uint64_t fingerprint(const ModelConfig& c);
std::uint64_t fnv1a64(std::string_view bytes);

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

}  // namespace avse
