// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <type_traits>
#include <vector>

#include "avse/rng.hpp"
#include "avse/tensor.hpp"

// Differentiable kernels. Every op validates shapes and throws
// DimensionError naming the offending shapes. All are defined for float and
// double.
namespace avse {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, double s);
// x[..., n] + b[n]
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// a[m x k] . b[k x n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Batched: a[N x m x k] . b[N x k x n], either operand optionally transposed
// in its last two axes.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);
// x[..., in] . w[in x out] -> [..., out]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

// Valid (unpadded) correlation. x[B x Cin x T], w[Cout x Cin x K] ->
// [B x Cout x floor((T-K)/stride)+1]. Throws SignalTooShortError if T < K.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride);
// Adjoint of conv1d for the same weight tensor. x[B x Cin x T],
// w[Cin x Cout x K] -> [B x Cout x (T-1)*stride+K].
template <typename T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

// Max-shifted softmax along `axis` (negative counts from the end).
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// Inverted dropout: survivors scaled by 1/(1-p). Identity when !training or
// p == 0. Throws ConfigError unless 0 <= p < 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);

// Standardize over the last axis, then y = xhat * gamma + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-8);

// Crop or zero-pad the last axis to `len`.
template <typename T> Tensor<T> fit_length(const Tensor<T>& x, std::size_t len);

// scores[B x h x Tq x Tk] + bias[B x h x Tk], broadcast over queries.
template <typename T>
Tensor<T> add_key_bias(const Tensor<T>& scores, const Tensor<T>& bias);

// softmax(Q K^T * scale + bias) V per head, for Q, K [B x h x T x d],
// V [B x h x T x d'] and an optional key bias [B x h x T]. Same values as the
// composed ops; only the output is kept on the tape.
template <typename T>
Tensor<T> fused_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          const std::type_identity_t<Tensor<T>>* bias, double scale);

// Linear interpolation along axis 1: x[B x N x D] -> [B x len x D] with
// output j sampled at input position j*(N-1)/(len-1).
template <typename T> Tensor<T> interp_linear(const Tensor<T>& x, std::size_t len);

// x[B x T x C] -> [B x S x L x C]: S windows of length L, hop L/2 (at least
// 1), tail zero-padded. S = 1 + ceil(max(T-L, 0) / hop).
template <typename T> Tensor<T> overlap_chunk(const Tensor<T>& x, std::size_t chunk_len);
// Inverse of overlap_chunk: averages overlapping windows back to [B x T x C].
template <typename T> Tensor<T> overlap_unchunk(const Tensor<T>& y, std::size_t length);

std::size_t chunk_hop(std::size_t chunk_len);
std::size_t chunk_count(std::size_t length, std::size_t chunk_len);

}  // namespace avse
