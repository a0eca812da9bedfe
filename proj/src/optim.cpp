// SPDX-License-Identifier: Apache-2.0

#include "avse/optim.hpp"

#include <cmath>
#include <string>

#include "avse/error.hpp"

namespace avse {

template <typename T>
void RmsProp::step(const ParamList<T>& params, double lr) {
  std::vector<const NamedParam<T>*> ps;
  for (const auto& p : params)
    if (p.trainable) ps.push_back(&p);
  if (square_avg.empty()) {
    square_avg.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) square_avg[i].assign(ps[i]->tensor.numel(), 0.0);
  }
  if (square_avg.size() != ps.size()) throw UsageError("rmsprop: parameter list changed between steps");
  for (const auto* p : ps) {
    auto g = p->tensor.grad();
    for (T v : g)
      if (!std::isfinite(static_cast<double>(v)))
        throw TrainingError("non-finite gradient in '" + p->name + "' at step " + std::to_string(steps));
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Tensor<T> t = ps[k]->tensor;
    auto& v = square_avg[k];
    if (v.size() != t.numel()) throw UsageError("rmsprop: state size mismatch for '" + ps[k]->name + "'");
    auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      v[i] = alpha * v[i] + (1.0 - alpha) * gi * gi;
      if (gi != 0.0) w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * gi / (std::sqrt(v[i]) + eps));
    }
  }
  ++steps;
}

template void RmsProp::step(const ParamList<float>&, double);
template void RmsProp::step(const ParamList<double>&, double);

double PlateauScheduler::step(double val_loss) {
  if (!std::isfinite(val_loss)) throw TrainingError("plateau scheduler: non-finite validation loss");
  if (val_loss < best - std::abs(best) * threshold || !std::isfinite(best)) {
    best = val_loss;
    bad_epochs = 0;
  } else if (++bad_epochs >= patience) {
    lr *= factor;
    bad_epochs = 0;
    ++reductions;
  }
  return lr;
}

}  // namespace avse
