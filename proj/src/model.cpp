// SPDX-License-Identifier: Apache-2.0

#include "avse/model.hpp"

#include <algorithm>
#include <map>

#include "avse/error.hpp"
#include "avse/ops.hpp"

namespace avse {

template <typename T>
AvseModel<T> AvseModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AvseModel m;
  m.cfg_ = cfg;
  // Separate streams per component so that changing one part of the
  // architecture does not reshuffle the others.
  Rng ra = Rng::derive(seed, {1}), rv = Rng::derive(seed, {2}), rx = Rng::derive(seed, {3});
  Rng rs = Rng::derive(seed, {4}), rd = Rng::derive(seed, {5});
  m.audio_ = AudioEncoder<T>::init(cfg, ra);
  m.visual_ = VisualEncoder<T>::init(cfg, rv);
  m.attn_ = AttentionState<T>::init(AttentionConfig::from(cfg), rx);
  m.sep_ = Separator<T>::init(cfg, rs);
  m.dec_ = Decoder<T>::init(cfg, rd);
  m.start_near_identity();
  return m;
}

// Rewires the fresh weights so that the untrained network is close to a
// filtered copy of its input. Encoder filters come in sign pairs (f, -f),
// whose ReLU outputs subtract back to the linear response; the projection
// passes those pairs through and the decoder holds the matching adjoint
// filters. Residual branches (attention output, block norms) start at
// zero gain. A random decoder instead yields outputs that barely
// correlate with the input, which parks every item on the loss clip where
// the gradient is zero.
template <typename T>
void AvseModel<T>::start_near_identity() {
  const std::size_t C = cfg_.enc_channels, P = cfg_.sep_proj, K = cfg_.enc_kernel;
  const std::size_t pairs = std::min(C, P) / 2;
  auto enc = audio_.weight.mutable_data();  // [C x 1 x K]
  double energy = 0;
  for (std::size_t j = 0; j < pairs; ++j)
    for (std::size_t k = 0; k < K; ++k) {
      enc[(2 * j + 1) * K + k] = -enc[2 * j * K + k];
      energy += static_cast<double>(enc[2 * j * K + k]) * static_cast<double>(enc[2 * j * K + k]);
    }
  auto proj = sep_.proj.mutable_data();  // [C x P]
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < 2 * pairs; ++p) proj[c * P + p] = c == p ? T(1) : T(0);
  auto dec = dec_.weight.mutable_data();  // [P x 1 x K]
  const double a = energy > 0 ? static_cast<double>(cfg_.enc_stride) / energy : 0.0;
  for (std::size_t j = 0; j < pairs; ++j)
    for (std::size_t k = 0; k < K; ++k) {
      dec[2 * j * K + k] = static_cast<T>(a * static_cast<double>(enc[2 * j * K + k]));
      dec[(2 * j + 1) * K + k] = -dec[2 * j * K + k];
    }
  std::fill(attn_.w_out.mutable_data().begin(), attn_.w_out.mutable_data().end(), T(0));
  for (auto& b : sep_.blocks)
    for (auto* g : {&b.intra_gamma, &b.inter_gamma}) {
      auto d = g->mutable_data();
      std::fill(d.begin(), d.end(), T(0));
    }
}

template <typename T>
Tensor<T> AvseModel<T>::forward(const Tensor<T>& wave, const Tensor<T>& visual, const ForwardMode& mode) const {
  if (wave.rank() != 2) throw DimensionError("model: expected wave [B x T], got " + shape_str(wave.shape()));
  if (visual.rank() != 3 || visual.dim(0) != wave.dim(0))
    throw DimensionError("model: visual " + shape_str(visual.shape()) + " does not pair with wave " +
                         shape_str(wave.shape()));
  const std::size_t len = wave.dim(1);
  auto z = audio_.forward(wave);  // [B x C x T^]
  auto x_a = permute(z, {0, 2, 1});
  auto x_v = temporal_align(visual, x_a.dim(1));
  auto fused = add(x_a, cross_attention(x_a, x_v, attn_));
  auto feats = sep_.forward(permute(fused, {0, 2, 1}), mode);
  return dec_.forward(feats, len);
}

template <typename T>
EnhanceResult AvseModel<T>::enhance(const Waveform& noisy, const VisualStream& v, MaskMode mode) const {
  NoGradGuard guard;
  if (noisy.rate != kSampleRate) throw FormatError("enhance: only 16 kHz input is supported");
  auto feats = visual_.encode(v);
  Tensor<T> wave({1, noisy.size()}, std::vector<T>(noisy.samples.begin(), noisy.samples.end()));
  auto vis = reshape(feats, {1, feats.dim(0), feats.dim(1)});
  auto out = forward(wave, vis);
  EnhanceResult r;
  r.raw.rate = noisy.rate;
  r.raw.samples.assign(out.data().begin(), out.data().end());
  r.mask = estimate_mask(r.raw, noisy, cfg_.stft, cfg_.mask_eps, cfg_.mask_threshold);
  r.enhanced = mode == MaskMode::kOff ? r.raw : reconstruct(noisy, r.mask, cfg_.stft, mode);
  return r;
}

template <typename T>
ParamList<T> AvseModel<T>::parameters() const {
  ParamList<T> ps;
  audio_.collect(ps);
  visual_.collect(ps);
  attn_.collect(ps);
  sep_.collect(ps);
  dec_.collect(ps);
  return ps;
}

template <typename T>
ParamList<T> AvseModel<T>::trainable_parameters() const {
  ParamList<T> ps;
  for (auto& p : parameters())
    if (p.trainable) ps.push_back(p);
  return ps;
}

template <typename T>
std::vector<NamedArray> AvseModel<T>::export_state() const {
  std::vector<NamedArray> out;
  for (const auto& p : parameters()) {
    auto d = p.tensor.data();
    out.push_back({p.name, p.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

template <typename T>
void AvseModel<T>::import_state(const std::vector<NamedArray>& arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto ps = parameters();
  if (by_name.size() != ps.size())
    throw FormatError("model state: " + std::to_string(by_name.size()) + " arrays, model has " +
                      std::to_string(ps.size()));
  for (auto& p : ps) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("model state: missing array '" + p.name + "'");
    const NamedArray& a = *it->second;
    if (a.shape != p.tensor.shape())
      throw FormatError("model state: '" + p.name + "' has shape " + shape_str(a.shape) + ", expected " +
                        shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  }
}

template class AvseModel<float>;
template class AvseModel<double>;

}  // namespace avse
