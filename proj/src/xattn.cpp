// SPDX-License-Identifier: Apache-2.0

#include "avse/xattn.hpp"

#include <cmath>
#include <string>

#include "avse/error.hpp"
#include "avse/ops.hpp"

namespace avse {

void AttentionConfig::validate() const {
  if (d_a == 0 || d_v == 0 || heads == 0) throw ConfigError("attention: extents must be positive");
  if (d_a % heads != 0)
    throw ConfigError("attention: d_a " + std::to_string(d_a) + " not divisible by " +
                      std::to_string(heads) + " heads");
}

AttentionConfig AttentionConfig::from(const ModelConfig& m) {
  AttentionConfig c;
  c.d_a = m.enc_channels;
  c.d_v = m.visual_dim;
  c.heads = m.heads;
  c.validate();
  return c;
}

template <typename T>
AttentionState<T> AttentionState<T>::init(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  AttentionState s;
  s.cfg = cfg;
  const double sa = 1.0 / std::sqrt(static_cast<double>(cfg.d_a));
  const double sv = 1.0 / std::sqrt(static_cast<double>(cfg.d_v));
  s.w_q = Tensor<T>::uniform({cfg.d_a, cfg.d_a}, rng, -sa, sa);
  s.w_k = Tensor<T>::uniform({cfg.d_a, cfg.d_a}, rng, -sa, sa);
  s.w_v = Tensor<T>::uniform({cfg.d_a, cfg.d_a}, rng, -sa, sa);
  s.w_out = Tensor<T>::uniform({cfg.d_a, cfg.d_a}, rng, -sa, sa);
  s.w_vis = Tensor<T>::uniform({cfg.d_v, cfg.heads}, rng, -sv, sv);
  for (auto* t : {&s.w_q, &s.w_k, &s.w_v, &s.w_out, &s.w_vis}) t->set_requires_grad(true);
  return s;
}

template <typename T>
void AttentionState<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_q", w_q, true});
  out.push_back({prefix + ".w_k", w_k, true});
  out.push_back({prefix + ".w_v", w_v, true});
  out.push_back({prefix + ".w_vis", w_vis, true});
  out.push_back({prefix + ".w_out", w_out, true});
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0)
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " with " + std::to_string(heads) + " heads");
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  return permute(reshape(x, {B, L, heads, D / heads}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("merge_heads: expected [B x h x T x d_h], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), L = x.dim(2), Dh = x.dim(3);
  return reshape(permute(x, {0, 2, 1, 3}), {B, L, H * Dh});
}

template <typename T>
Qkv<T> project_qkv(const Tensor<T>& x_a, const AttentionState<T>& s) {
  if (x_a.rank() != 3 || x_a.dim(2) != s.cfg.d_a)
    throw DimensionError("project_qkv: X_a " + shape_str(x_a.shape()) + " vs d_a " + std::to_string(s.cfg.d_a));
  return {split_heads(linear(x_a, s.w_q), s.cfg.heads), split_heads(linear(x_a, s.w_k), s.cfg.heads),
          split_heads(linear(x_a, s.w_v), s.cfg.heads)};
}

template <typename T>
Tensor<T> project_visual_bias(const Tensor<T>& x_v, const AttentionState<T>& s, std::size_t audio_len) {
  if (x_v.rank() != 3 || x_v.dim(2) != s.cfg.d_v)
    throw DimensionError("project_visual_bias: X_v " + shape_str(x_v.shape()) + " vs d_v " +
                         std::to_string(s.cfg.d_v));
  if (x_v.dim(1) != audio_len)
    throw AlignmentError("visual stream has " + std::to_string(x_v.dim(1)) + " frames, audio has " +
                         std::to_string(audio_len));
  return permute(linear(x_v, s.w_vis), {0, 2, 1});
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k, std::optional<double> scale) {
  if (q.rank() != 4 || k.shape() != q.shape())
    throw DimensionError("attention_scores: Q " + shape_str(q.shape()) + " vs K " + shape_str(k.shape()));
  const std::size_t B = q.dim(0), H = q.dim(1), L = q.dim(2), Dh = q.dim(3);
  const double sc = scale ? *scale : 1.0 / std::sqrt(static_cast<double>(Dh));
  auto s = bmm(reshape(q, {B * H, L, Dh}), reshape(k, {B * H, L, Dh}), false, true);
  return reshape(avse::scale(s, sc), {B, H, L, L});
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const std::type_identity_t<Tensor<T>>* bias,
                            std::optional<double> scale) {
  auto s = attention_scores(q, k, scale);
  if (bias) s = add_key_bias(s, *bias);
  return softmax(s, -1);
}

template <typename T>
Tensor<T> attend(const Qkv<T>& qkv, const std::type_identity_t<Tensor<T>>* bias, const AttentionState<T>& s,
                 std::optional<double> scale) {
  if (qkv.q.rank() != 4 || qkv.k.shape() != qkv.q.shape())
    throw DimensionError("attend: Q " + shape_str(qkv.q.shape()) + " vs K " + shape_str(qkv.k.shape()));
  const double sc = scale ? *scale : 1.0 / std::sqrt(static_cast<double>(qkv.q.dim(3)));
  return linear(merge_heads(fused_attention(qkv.q, qkv.k, qkv.v, bias, sc)), s.w_out);
}

template <typename T>
Tensor<T> cross_attention(const Tensor<T>& x_a, const Tensor<T>& x_v, const AttentionState<T>& s) {
  auto qkv = project_qkv(x_a, s);
  auto bias = project_visual_bias(x_v, s, x_a.dim(1));
  if (x_v.dim(0) != x_a.dim(0))
    throw DimensionError("cross_attention: batch " + std::to_string(x_a.dim(0)) + " vs " +
                         std::to_string(x_v.dim(0)));
  return attend(qkv, &bias, s);
}

#define AVSE_INSTANTIATE_XATTN(T)                                                                     \
  template struct AttentionState<T>;                                                                  \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> merge_heads(const Tensor<T>&);                                                   \
  template Qkv<T> project_qkv(const Tensor<T>&, const AttentionState<T>&);                            \
  template Tensor<T> project_visual_bias(const Tensor<T>&, const AttentionState<T>&, std::size_t);    \
  template Tensor<T> attention_scores(const Tensor<T>&, const Tensor<T>&, std::optional<double>);     \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,          \
                                       std::optional<double>);                                        \
  template Tensor<T> attend(const Qkv<T>&, const Tensor<T>*, const AttentionState<T>&,                \
                            std::optional<double>);                                                   \
  template Tensor<T> cross_attention(const Tensor<T>&, const Tensor<T>&, const AttentionState<T>&);

AVSE_INSTANTIATE_XATTN(float)
AVSE_INSTANTIATE_XATTN(double)

}  // namespace avse
