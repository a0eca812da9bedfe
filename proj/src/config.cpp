// SPDX-License-Identifier: Apache-2.0

#include "avse/config.hpp"

#include <string>

#include "avse/error.hpp"

namespace avse {

using nlohmann::json;

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.preset = "tiny";
  c.enc_channels = 32;
  c.visual_dim = 32;
  c.frame_size = 32;
  c.visual_channels = {8, 16, 16, 32};
  c.heads = 2;
  c.sep_blocks = 2;
  c.sep_hidden = 32;
  c.sep_proj = 16;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw ConfigError("unknown preset '" + name + "' (expected paper or tiny)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (enc_channels == 0 || enc_kernel == 0 || enc_stride == 0) fail("encoder extents must be positive");
  if (heads == 0 || enc_channels % heads != 0) fail("enc_channels must be divisible by heads");
  if (visual_dim == 0) fail("visual_dim must be positive");
  if (sep_blocks == 0) fail("sep_blocks must be >= 1");
  if (sep_proj == 0 || sep_proj > sep_hidden) fail("need 0 < sep_proj <= sep_hidden");
  if (sep_hidden != enc_channels) fail("sep_hidden must equal enc_channels (residual paths)");
  if (chunk_len == 0) fail("chunk_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (frame_size < 8) fail("frame_size must be >= 8");
  for (auto ch : visual_channels)
    if (ch == 0) fail("visual channels must be positive");
  if (front_kernel_t % 2 == 0 || front_kernel_s % 2 == 0) fail("front-end kernels must be odd");
  if (!(fps > 0.0)) fail("fps must be positive");
  if (stft.hop == 0 || stft.hop > stft.window_len) fail("need 0 < stft hop <= window");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) fail("mask_threshold must be in (0, 1)");
}

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::tiny() {
  TrainConfig c;
  c.batch = 4;
  c.lr = 1e-3;
  c.epochs = 20;
  c.segment_len = 16000;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch == 0) fail("batch must be positive");
  if (!(rms_alpha > 0.0 && rms_alpha < 1.0)) fail("rms_alpha must be in (0, 1)");
  if (!(rms_eps > 0.0)) fail("rms_eps must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) fail("plateau_patience must be >= 1");
  if (!(plateau_threshold >= 0.0)) fail("plateau_threshold must be >= 0");
  if (epochs == 0) fail("epochs must be positive");
  if (segment_len == 0) fail("segment_len must be positive");
}

namespace {

std::string window_name(WindowKind k) { return k == WindowKind::kHann ? "hann" : "rect"; }

WindowKind parse_window(const std::string& s) {
  if (s == "hann") return WindowKind::kHann;
  if (s == "rect") return WindowKind::kRectangular;
  throw ConfigError("unknown window '" + s + "'");
}

template <typename V>
void take(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

void reject_unknown(const json& j, const json& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key()))
      throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = json{{"preset", c.preset},
           {"enc_channels", c.enc_channels},
           {"enc_kernel", c.enc_kernel},
           {"enc_stride", c.enc_stride},
           {"visual_dim", c.visual_dim},
           {"frame_size", c.frame_size},
           {"visual_channels", c.visual_channels},
           {"front_kernel_t", c.front_kernel_t},
           {"front_kernel_s", c.front_kernel_s},
           {"fps", c.fps},
           {"heads", c.heads},
           {"sep_blocks", c.sep_blocks},
           {"sep_hidden", c.sep_hidden},
           {"sep_proj", c.sep_proj},
           {"chunk_len", c.chunk_len},
           {"dropout", c.dropout},
           {"stft_window", c.stft.window_len},
           {"stft_hop", c.stft.hop},
           {"stft_taper", window_name(c.stft.window)},
           {"mask_threshold", c.mask_threshold},
           {"mask_eps", c.mask_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  c = merge_model_config(ModelConfig::preset_named(j.value("preset", std::string("paper"))), j);
}

ModelConfig merge_model_config(const ModelConfig& base, const json& j) {
  reject_unknown(j, json(base), "model config");
  ModelConfig c = base;
  try {
    take(j, "preset", c.preset);
    take(j, "enc_channels", c.enc_channels);
    take(j, "enc_kernel", c.enc_kernel);
    take(j, "enc_stride", c.enc_stride);
    take(j, "visual_dim", c.visual_dim);
    take(j, "frame_size", c.frame_size);
    take(j, "visual_channels", c.visual_channels);
    take(j, "front_kernel_t", c.front_kernel_t);
    take(j, "front_kernel_s", c.front_kernel_s);
    take(j, "fps", c.fps);
    take(j, "heads", c.heads);
    take(j, "sep_blocks", c.sep_blocks);
    take(j, "sep_hidden", c.sep_hidden);
    take(j, "sep_proj", c.sep_proj);
    take(j, "chunk_len", c.chunk_len);
    take(j, "dropout", c.dropout);
    take(j, "stft_window", c.stft.window_len);
    take(j, "stft_hop", c.stft.hop);
    if (j.contains("stft_taper")) c.stft.window = parse_window(j.at("stft_taper").get<std::string>());
    take(j, "mask_threshold", c.mask_threshold);
    take(j, "mask_eps", c.mask_eps);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"batch", c.batch},
           {"rms_alpha", c.rms_alpha},
           {"rms_eps", c.rms_eps},
           {"plateau_factor", c.plateau_factor},
           {"plateau_patience", c.plateau_patience},
           {"plateau_threshold", c.plateau_threshold},
           {"epochs", c.epochs},
           {"segment_len", c.segment_len},
           {"loss_clip_db", c.loss_clip_db},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) { c = merge_train_config(TrainConfig::paper(), j); }

TrainConfig merge_train_config(const TrainConfig& base, const json& j) {
  reject_unknown(j, json(base), "train config");
  TrainConfig c = base;
  try {
    take(j, "lr", c.lr);
    take(j, "batch", c.batch);
    take(j, "rms_alpha", c.rms_alpha);
    take(j, "rms_eps", c.rms_eps);
    take(j, "plateau_factor", c.plateau_factor);
    take(j, "plateau_patience", c.plateau_patience);
    take(j, "plateau_threshold", c.plateau_threshold);
    take(j, "epochs", c.epochs);
    take(j, "segment_len", c.segment_len);
    take(j, "loss_clip_db", c.loss_clip_db);
    take(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const ModelConfig& c) { return fnv1a64(json(c).dump()); }

std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

}  // namespace avse
