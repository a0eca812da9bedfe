// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "avse/tensor.hpp"

namespace avse {

// A named weight array. `trainable` arrays take part in the gradient tape;
// the rest (visual CNN) are inference-only but still counted and saved.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t total_elements(const ParamList<T>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.tensor.numel();
  return n;
}

}  // namespace avse
