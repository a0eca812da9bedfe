// SPDX-License-Identifier: Apache-2.0

#include "avse/separator.hpp"

#include <algorithm>
#include <cmath>

#include "avse/error.hpp"
#include "avse/ops.hpp"

namespace avse {

namespace {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardMode& m) {
  if (!m.training || m.dropout == 0.0) return x;
  if (!m.rng) throw UsageError("training forward pass needs an rng for dropout");
  return dropout(x, m.dropout, true, *m.rng);
}

template <typename T>
Tensor<T> trainable(Tensor<T> t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
DualPathBlock<T> DualPathBlock<T>::init(std::size_t channels, Rng& rng) {
  DualPathBlock b;
  b.intra = GruParams<T>::init(channels, channels, rng);
  b.inter = GruParams<T>::init(channels, channels, rng);
  b.intra_gamma = trainable(Tensor<T>::full({channels}, T(1)));
  b.intra_beta = trainable(Tensor<T>({channels}));
  b.inter_gamma = trainable(Tensor<T>::full({channels}, T(1)));
  b.inter_beta = trainable(Tensor<T>({channels}));
  return b;
}

template <typename T>
Tensor<T> DualPathBlock<T>::forward(const Tensor<T>& x, const ForwardMode& mode) const {
  if (x.rank() != 4) throw DimensionError("dual-path block: expected [B x S x L x C], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), S = x.dim(1), L = x.dim(2), C = x.dim(3);

  auto h = gru_sequence(reshape(x, {B * S, L, C}), intra);
  h = layer_norm(maybe_dropout(h, mode), intra_gamma, intra_beta);
  auto y = add(x, reshape(h, {B, S, L, C}));

  auto yt = permute(y, {0, 2, 1, 3});
  auto g = gru_sequence(reshape(yt, {B * L, S, C}), inter);
  g = layer_norm(maybe_dropout(g, mode), inter_gamma, inter_beta);
  return add(y, permute(reshape(g, {B, L, S, C}), {0, 2, 1, 3}));
}

template <typename T>
void DualPathBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  auto gru = [&](const GruParams<T>& p, const std::string& n) {
    out.push_back({n + ".w_ih", p.w_ih, true});
    out.push_back({n + ".w_hh", p.w_hh, true});
    out.push_back({n + ".b_ih", p.b_ih, true});
    out.push_back({n + ".b_hh", p.b_hh, true});
  };
  gru(intra, prefix + ".intra");
  out.push_back({prefix + ".intra_norm.gamma", intra_gamma, true});
  out.push_back({prefix + ".intra_norm.beta", intra_beta, true});
  gru(inter, prefix + ".inter");
  out.push_back({prefix + ".inter_norm.gamma", inter_gamma, true});
  out.push_back({prefix + ".inter_norm.beta", inter_beta, true});
}

template <typename T>
Separator<T> Separator<T>::init(const ModelConfig& cfg, Rng& rng) {
  Separator s;
  s.chunk_len = cfg.chunk_len;
  for (std::size_t i = 0; i < cfg.sep_blocks; ++i) s.blocks.push_back(DualPathBlock<T>::init(cfg.sep_hidden, rng));
  const double a = 1.0 / std::sqrt(static_cast<double>(cfg.sep_hidden));
  s.proj = trainable(Tensor<T>::uniform({cfg.sep_hidden, cfg.sep_proj}, rng, -a, a));
  return s;
}

template <typename T>
Tensor<T> Separator<T>::forward(const Tensor<T>& x, const ForwardMode& mode) const {
  if (x.rank() != 3 || x.dim(1) != proj.dim(0))
    throw DimensionError("separator: expected [B x " + std::to_string(proj.dim(0)) + " x T], got " +
                         shape_str(x.shape()));
  const std::size_t len = x.dim(2);
  auto c = overlap_chunk(permute(x, {0, 2, 1}), chunk_len);
  for (const auto& b : blocks) c = b.forward(c, mode);
  auto y = relu(linear(overlap_unchunk(c, len), proj));
  return permute(y, {0, 2, 1});
}

template <typename T>
void Separator<T>::collect(ParamList<T>& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "separator.block" + std::to_string(i));
  out.push_back({"separator.proj", proj, true});
}

template <typename T>
Decoder<T> Decoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  Decoder d;
  d.stride = cfg.enc_stride;
  const double a = 1.0 / std::sqrt(static_cast<double>(cfg.sep_proj * cfg.enc_kernel / cfg.enc_stride));
  d.weight = trainable(Tensor<T>::uniform({cfg.sep_proj, 1, cfg.enc_kernel}, rng, -a, a));
  return d;
}

template <typename T>
Tensor<T> Decoder<T>::forward(const Tensor<T>& x, std::size_t length) const {
  auto y = conv_transpose1d(x, weight, stride);
  return fit_length(reshape(y, {y.dim(0), y.dim(2)}), length);
}

template <typename T>
void Decoder<T>::collect(ParamList<T>& out) const {
  out.push_back({"decoder.weight", weight, true});
}

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "soft") return MaskMode::kSoft;
  if (s == "binary") return MaskMode::kBinary;
  if (s == "off") return MaskMode::kOff;
  throw ConfigError("unknown mask mode '" + s + "' (expected soft, binary or off)");
}

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::kSoft: return "soft";
    case MaskMode::kBinary: return "binary";
    case MaskMode::kOff: return "off";
  }
  return "?";
}

EstimatedMask estimate_mask(const Waveform& s_raw, const Waveform& noisy, const StftParams& p, double eps,
                            double threshold) {
  if (s_raw.size() != noisy.size())
    throw DimensionError("estimate_mask: estimate has " + std::to_string(s_raw.size()) + " samples, noisy has " +
                         std::to_string(noisy.size()));
  const auto S = stft_padded(s_raw.samples, p);
  const auto Y = stft_padded(noisy.samples, p);
  EstimatedMask m;
  m.soft.frames = m.binary.frames = Y.frames;
  m.soft.bins = m.binary.bins = Y.bins;
  m.soft.values.resize(Y.values.size());
  m.binary.values.resize(Y.values.size());
  for (std::size_t i = 0; i < Y.values.size(); ++i) {
    const double r = std::abs(S.values[i]) / std::max(std::abs(Y.values[i]), eps);
    m.soft.values[i] = std::clamp(r, 0.0, 1.0);
    m.binary.values[i] = m.soft.values[i] > threshold ? 1 : 0;
  }
  return m;
}

Waveform reconstruct(const Waveform& noisy, const EstimatedMask& m, const StftParams& p, MaskMode mode) {
  if (mode == MaskMode::kOff) throw UsageError("reconstruct: mask mode 'off' has nothing to apply");
  const auto Y = stft_padded(noisy.samples, p);
  const RealMask gain = mode == MaskMode::kBinary ? RealMask::from_binary(m.binary) : m.soft;
  return istft_trimmed(apply_mask(Y, gain), noisy.size(), noisy.rate);
}

template struct DualPathBlock<float>;
template struct DualPathBlock<double>;
template struct Separator<float>;
template struct Separator<double>;
template struct Decoder<float>;
template struct Decoder<double>;

}  // namespace avse
