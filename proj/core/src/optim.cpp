#include "asi/optim.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace asi {

Parameter::Parameter(std::string name_, std::vector<std::size_t> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(n, 0.0f);
  grad.assign(n, 0.0f);
  momentum.assign(n, 0.0f);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

SgdStats sgd_step(std::span<Parameter* const> params, const SgdOptions& options) {
  if (!(options.lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  SgdStats stats;
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.size() != p->value.size()) {
      throw std::invalid_argument("sgd_step: gradient size mismatch for " + p->name);
    }
    for (float g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  stats.grad_norm = std::sqrt(sq);
  if (options.clip_l2 > 0.0 && stats.grad_norm > options.clip_l2) {
    stats.clip_scale = options.clip_l2 / stats.grad_norm;
  }

  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->momentum.size() != p->value.size()) p->momentum.assign(p->value.size(), 0.0f);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = static_cast<double>(p->grad[i]) * stats.clip_scale;
      g += options.weight_decay * static_cast<double>(p->value[i]);
      double step = g;
      if (options.momentum != 0.0) {
        step = options.momentum * static_cast<double>(p->momentum[i]) + g;
        p->momentum[i] = static_cast<float>(step);
      }
      p->value[i] = static_cast<float>(static_cast<double>(p->value[i]) - options.lr * step);
    }
  }
  return stats;
}

}  // namespace asi
