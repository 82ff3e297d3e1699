#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "okdd/tensor.hpp"

namespace okdd {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One velocity buffer per trainable parameter, shape-matched.
struct OptimizerState {
  std::vector<std::vector<double>> velocity;

  void init(std::span<const Tensor> params) {
    velocity.clear();
    velocity.reserve(params.size());
    for (const Tensor& p : params)
      velocity.emplace_back(static_cast<std::size_t>(p.size()), 0.0);
  }
};

// Nesterov update: g <- grad + wd*p; v <- mu*v + g; p <- p - lr*(g + mu*v).
inline void sgd_nesterov_step(std::span<Tensor> params, OptimizerState& state, double lr,
                              double momentum, double weight_decay) {
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto vals = p.values();
    const auto grad = p.grad();
    auto& vel = state.velocity[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double raw = grad.empty() ? 0.0 : grad[j];
      if (!std::isfinite(raw))
        throw TrainError("non-finite gradient in parameter " + std::to_string(i) +
                         " at coordinate " + std::to_string(j));
      const double g = raw + weight_decay * vals[j];
      vel[j] = momentum * vel[j] + g;
      vals[j] -= lr * (g + momentum * vel[j]);
    }
  }
}

// lr0 * factor^k with k = number of drop epochs at or before `epoch`.
inline double lr_at(int epoch, double lr0, std::span<const int> drop_epochs, double factor) {
  int k = 0;
  for (int e : drop_epochs)
    if (e <= epoch) ++k;
  return lr0 * std::pow(factor, k);
}

// Gaussian ramp exp(-5 (1 - t)^2), t = epoch / rampup_epochs clamped to 1.
// Suppresses the distillation terms early in training.
inline double rampup_weight(int epoch, int rampup_epochs) {
  if (rampup_epochs <= 0) return 1.0;
  const double t = std::min(1.0, static_cast<double>(epoch) / rampup_epochs);
  return std::exp(-5.0 * (1.0 - t) * (1.0 - t));
}

}  // namespace okdd
