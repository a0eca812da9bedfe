// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse {

// Gate rows are stacked reset, update, candidate:
//   r = sigmoid(Wir x + bir + Whr h + bhr)
//   z = sigmoid(Wiz x + biz + Whz h + bhz)
//   n = tanh(Win x + bin + r * (Whn h + bhn))
//   h' = (1 - z) * n + z * h
template <typename T>
struct GruParams {
  Tensor<T> w_ih;  // [3H x D]
  Tensor<T> w_hh;  // [3H x H]
  Tensor<T> b_ih;  // [3H]
  Tensor<T> b_hh;  // [3H]

  std::size_t input_size() const { return w_ih.dim(1); }
  std::size_t hidden_size() const { return w_hh.dim(1); }

  // U(-1/sqrt(H), 1/sqrt(H)) for every array; marks all four trainable.
  static GruParams init(std::size_t input, std::size_t hidden, Rng& rng);
  static GruParams zeros(std::size_t input, std::size_t hidden);
};

// One step. x[B x D], h[B x H] -> [B x H].
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p);

// Runs N independent sequences from a zero state. x[N x L x D] -> every
// hidden state [N x L x H]. Differentiates through time in one node.
template <typename T>
Tensor<T> gru_sequence(const Tensor<T>& x, const GruParams<T>& p);

}  // namespace avse
