// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "avse/params.hpp"

namespace avse {

// v <- alpha v + (1 - alpha) g^2;  p <- p - lr g / (sqrt(v) + eps).
// Square averages are kept in double whatever the parameter precision.
struct RmsProp {
  double alpha = 0.99;
  double eps = 1e-8;
  std::vector<std::vector<double>> square_avg;  // one per trainable param, lazily sized
  std::uint64_t steps = 0;

  // Parameters without a gradient are treated as having a zero gradient.
  // TrainingError naming the parameter and step on a non-finite gradient;
  // nothing is updated in that case.
  template <typename T>
  void step(const ParamList<T>& params, double lr);
};

// Multiplies lr by `factor` once `patience` consecutive epochs fail to
// improve on the best loss by more than threshold * |best|.
struct PlateauScheduler {
  double factor = 0.8;
  std::size_t patience = 5;
  double threshold = 1e-4;
  double lr = 1e-4;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t reductions = 0;

  // Returns the lr for the next epoch. TrainingError on non-finite input.
  double step(double val_loss);
};

}  // namespace avse
