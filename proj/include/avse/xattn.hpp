// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <type_traits>
#include <optional>

#include "avse/config.hpp"
#include "avse/params.hpp"
#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse {

struct AttentionConfig {
  std::size_t d_a = 256;
  std::size_t d_v = 256;
  std::size_t heads = 8;

  std::size_t head_dim() const { return d_a / heads; }
  void validate() const;  // ConfigError
  static AttentionConfig from(const ModelConfig& m);
};

// All projections are bias-free and applied as x . W.
template <typename T>
struct AttentionState {
  AttentionConfig cfg;
  Tensor<T> w_q, w_k, w_v, w_out;  // [d_a x d_a]
  Tensor<T> w_vis;                 // [d_v x h]

  static AttentionState init(const AttentionConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix = "xattn") const;
};

template <typename T>
struct Qkv {
  Tensor<T> q, k, v;  // [B x h x T x d_h]
};

// [B x T x d_a] <-> [B x h x T x d_h]; pure permutations.
template <typename T> Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);
template <typename T> Tensor<T> merge_heads(const Tensor<T>& x);

template <typename T>
Qkv<T> project_qkv(const Tensor<T>& x_a, const AttentionState<T>& s);

// X_v[B x T x d_v] -> [B x h x T], one offset per key frame and head.
// Throws AlignmentError when X_v and the audio stream differ in length.
template <typename T>
Tensor<T> project_visual_bias(const Tensor<T>& x_v, const AttentionState<T>& s, std::size_t audio_len);

// Q K^T * scale per head, [B x h x T x T]. Default scale is 1/sqrt(d_h).
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& q, const Tensor<T>& k, std::optional<double> scale = {});

// softmax over keys of scores + bias broadcast over queries. A null `bias`
// skips the bias term entirely (plain self-attention).
// NumericError when the scores are not finite.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const std::type_identity_t<Tensor<T>>* bias,
                            std::optional<double> scale = {});

// A . V, heads merged, then W_out: -> [B x T x d_a].
template <typename T>
Tensor<T> attend(const Qkv<T>& qkv, const std::type_identity_t<Tensor<T>>* bias, const AttentionState<T>& s,
                 std::optional<double> scale = {});

// Full block: X_a[B x T x d_a], X_v[B x T x d_v] -> attention output
// [B x T x d_a]. The caller adds the residual.
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& x_a, const Tensor<T>& x_v, const AttentionState<T>& s);

}  // namespace avse
