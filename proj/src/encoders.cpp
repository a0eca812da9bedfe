// SPDX-License-Identifier: Apache-2.0

#include "avse/encoders.hpp"

#include <cmath>
#include <string>

#include "avse/error.hpp"
#include "avse/io.hpp"
#include "avse/ops.hpp"

namespace avse {

std::size_t encoded_length(std::size_t samples, const ModelConfig& cfg) {
  if (samples < cfg.enc_kernel)
    throw SignalTooShortError("audio encoder: " + std::to_string(samples) +
                              " samples, kernel needs " + std::to_string(cfg.enc_kernel));
  return (samples - cfg.enc_kernel) / cfg.enc_stride + 1;
}

template <typename T>
AudioEncoder<T> AudioEncoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  AudioEncoder e;
  e.stride = cfg.enc_stride;
  e.weight = Tensor<T>::randn({cfg.enc_channels, 1, cfg.enc_kernel}, rng,
                              std::sqrt(2.0 / static_cast<double>(cfg.enc_kernel)));
  e.weight.set_requires_grad(true);
  return e;
}

template <typename T>
Tensor<T> AudioEncoder<T>::forward(const Tensor<T>& wave) const {
  if (wave.rank() != 2) throw DimensionError("audio encoder: expected [B x T], got " + shape_str(wave.shape()));
  const std::size_t K = weight.dim(2);
  if (wave.dim(1) < K)
    throw SignalTooShortError("audio encoder: " + std::to_string(wave.dim(1)) +
                              " samples, kernel needs " + std::to_string(K));
  return relu(conv1d(reshape(wave, {wave.dim(0), 1, wave.dim(1)}), weight, stride));
}

template <typename T>
void AudioEncoder<T>::collect(ParamList<T>& out) const {
  out.push_back({"audio_encoder.weight", weight, true});
}

VisualStream VisualStream::features(std::size_t count, std::size_t dim, double fps,
                                    std::vector<float> values) {
  if (count == 0 || dim == 0) throw DimensionError("visual features: empty stream");
  if (values.size() != count * dim)
    throw DimensionError("visual features: " + std::to_string(values.size()) + " values for " +
                         std::to_string(count) + "x" + std::to_string(dim));
  VisualStream v;
  v.mode = Mode::kFeatures;
  v.count = count;
  v.dim = dim;
  v.fps = fps;
  v.values = std::move(values);
  return v;
}

VisualStream VisualStream::frames(std::size_t count, std::size_t height, std::size_t width,
                                  double fps, std::vector<float> values) {
  if (count == 0 || height == 0 || width == 0) throw DimensionError("visual frames: empty stream");
  if (values.size() != count * height * width)
    throw DimensionError("visual frames: value count does not match N x H x W");
  VisualStream v;
  v.mode = Mode::kFrames;
  v.count = count;
  v.height = height;
  v.width = width;
  v.fps = fps;
  v.values = std::move(values);
  return v;
}

std::vector<std::uint8_t> encode_vft(const VisualStream& v) {
  if (v.mode != VisualStream::Mode::kFeatures) throw UsageError("encode_vft: stream is not in features mode");
  ByteWriter w;
  w.bytes("VFT1");
  w.u32(static_cast<std::uint32_t>(v.count));
  w.u32(static_cast<std::uint32_t>(v.dim));
  w.f32(static_cast<float>(v.fps));
  for (float x : v.values) w.f32(x);
  return w.take();
}

VisualStream decode_vft(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "vft");
  if (r.bytes(4) != "VFT1") throw FormatError("vft: bad magic");
  const std::uint32_t n = r.u32(), d = r.u32();
  const float fps = r.f32();
  if (n == 0 || d == 0) throw FormatError("vft: empty stream");
  if (!(fps > 0.0f)) throw FormatError("vft: fps must be positive");
  if (r.remaining() != static_cast<std::size_t>(n) * d * 4)
    throw FormatError("vft: payload size does not match header");
  std::vector<float> vals(static_cast<std::size_t>(n) * d);
  for (auto& x : vals) x = r.f32();
  return VisualStream::features(n, d, fps, std::move(vals));
}

std::vector<std::uint8_t> encode_vfr(const VisualStream& v) {
  if (v.mode != VisualStream::Mode::kFrames) throw UsageError("encode_vfr: stream is not in frames mode");
  ByteWriter w;
  w.bytes("VFR1");
  w.u32(static_cast<std::uint32_t>(v.count));
  w.u32(static_cast<std::uint32_t>(v.height));
  w.u32(static_cast<std::uint32_t>(v.width));
  for (float x : v.values) w.f32(x);
  return w.take();
}

VisualStream decode_vfr(std::span<const std::uint8_t> bytes, double fps) {
  ByteReader r(bytes, "vfr");
  if (r.bytes(4) != "VFR1") throw FormatError("vfr: bad magic");
  const std::uint32_t n = r.u32(), h = r.u32(), w = r.u32();
  if (n == 0 || h == 0 || w == 0) throw FormatError("vfr: empty stream");
  if (r.remaining() != static_cast<std::size_t>(n) * h * w * 4)
    throw FormatError("vfr: payload size does not match header");
  std::vector<float> vals(static_cast<std::size_t>(n) * h * w);
  for (auto& x : vals) {
    x = r.f32();
    if (!(x >= 0.0f && x <= 1.0f)) throw FormatError("vfr: pixel value outside [0, 1]");
  }
  return VisualStream::frames(n, h, w, fps, std::move(vals));
}

VisualStream read_visual(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "VFR1")
    return decode_vfr(bytes);
  return decode_vft(bytes);
}

void write_visual(const std::filesystem::path& path, const VisualStream& v) {
  write_file_atomic(path, v.mode == VisualStream::Mode::kFeatures ? encode_vft(v) : encode_vfr(v));
}

template <typename T>
Tensor<T> temporal_align(const Tensor<T>& per_frame, std::size_t target_len) {
  if (per_frame.rank() != 3)
    throw DimensionError("temporal_align: expected [B x N x d_v], got " + shape_str(per_frame.shape()));
  if (per_frame.dim(1) == target_len) return per_frame;
  return interp_linear(per_frame, target_len);
}

template <typename T>
Tensor<T> visual_tensor(const VisualStream& v) {
  if (v.mode != VisualStream::Mode::kFeatures) throw UsageError("visual_tensor: frames must be encoded first");
  std::vector<T> vals(v.values.begin(), v.values.end());
  return Tensor<T>({1, v.count, v.dim}, std::move(vals));
}

template struct AudioEncoder<float>;
template struct AudioEncoder<double>;
template Tensor<float> temporal_align(const Tensor<float>&, std::size_t);
template Tensor<double> temporal_align(const Tensor<double>&, std::size_t);
template Tensor<float> visual_tensor(const VisualStream&);
template Tensor<double> visual_tensor(const VisualStream&);

}  // namespace avse
