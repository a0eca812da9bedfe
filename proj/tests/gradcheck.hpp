// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "avse/ops.hpp"
#include "avse/rng.hpp"
#include "avse/tensor.hpp"

namespace avse::testing {

struct GradLeaf {
  std::string name;
  Tensor<double> tensor;
};

struct GradReport {
  double max_rel = 0;      // worst per-tensor relative error
  std::string worst;       // tensor it came from
  std::size_t probes = 0;  // finite-difference evaluations per side
};

// Compares analytic gradients of `loss_fn` (a scalar, rebuilt on every
// call) against central differences. Per tensor the error is
//   max |analytic - numeric| / max(max |analytic|, max |numeric|)
// over the probed elements; all elements when numel <= max_probe (or
// max_probe == 0), else a seeded random subset of max_probe.
inline GradReport check_gradients(const std::function<Tensor<double>()>& loss_fn, std::vector<GradLeaf> leaves,
                                  std::size_t max_probe = 0, double eps = 1e-5, std::uint64_t seed = 7) {
  for (auto& l : leaves) {
    l.tensor.set_requires_grad(true);
    l.tensor.zero_grad();
  }
  backward(loss_fn());
  GradReport rep;
  Rng pick(seed);
  for (auto& l : leaves) {
    const std::size_t n = l.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (l.tensor.has_grad()) std::copy(l.tensor.grad().begin(), l.tensor.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_probe > 0 && n > max_probe) {
      for (std::size_t i = 0; i < max_probe; ++i) std::swap(idx[i], idx[i + pick.below(n - i)]);
      idx.resize(max_probe);
    }
    double diff = 0, scale = 0;
    auto data = l.tensor.mutable_data();
    for (auto i : idx) {
      const double keep = data[i];
      double lp, lm;
      {
        NoGradGuard ng;
        data[i] = keep + eps;
        lp = loss_fn().item();
        data[i] = keep - eps;
        lm = loss_fn().item();
      }
      data[i] = keep;
      const double numeric = (lp - lm) / (2 * eps);
      diff = std::max(diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    rep.probes += idx.size();
    const double rel = scale > 0 ? diff / scale : 0.0;
    if (rel >= rep.max_rel) {
      rep.max_rel = rel;
      rep.worst = l.name;
    }
    l.tensor.zero_grad();
  }
  return rep;
}

// Fixed random projection to a scalar: sum(x * r) with r drawn from `seed`.
// Turns any tensor output into a loss whose gradient exercises every entry.
inline Tensor<double> probe_loss(const Tensor<double>& x, std::uint64_t seed = 99) {
  Rng r(seed);
  auto w = Tensor<double>::randn(x.shape(), r);
  return sum(mul(x, w));
}

}  // namespace avse::testing
