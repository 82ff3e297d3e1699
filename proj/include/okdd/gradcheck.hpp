#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "okdd/ops.hpp"
#include "okdd/tensor.hpp"

namespace okdd {

// Max over coordinates of |analytic - central difference| relative to the
// combined magnitude. f must rebuild the scalar loss from x on every call.
inline double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                      double eps = 1e-5) {
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f(x);
    x.zero_grad();
    tape.backward(loss);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  double worst = 0.0;
  {
    TapeSuspend off;
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const double saved = x.values()[i];
      x.values()[i] = saved + eps;
      const double up = f(x).item();
      x.values()[i] = saved - eps;
      const double down = f(x).item();
      x.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(analytic[i] - numeric) /
                         (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Same check against every coordinate of a parameter set. loss_fn must
// rebuild the scalar loss from the parameters' current values.
inline double finite_difference_check_params(const std::function<Tensor()>& loss_fn,
                                             std::span<Tensor> params, double eps = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    for (Tensor& p : params) p.zero_grad();
    tape.backward(loss);
    for (Tensor& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
  }
  double worst = 0.0;
  {
    TapeSuspend off;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi];
      for (std::int64_t i = 0; i < p.size(); ++i) {
        const double saved = p.values()[i];
        p.values()[i] = saved + eps;
        const double up = loss_fn().item();
        p.values()[i] = saved - eps;
        const double down = loss_fn().item();
        p.values()[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double rel = std::abs(analytic[pi][i] - numeric) /
                           (std::abs(analytic[pi][i]) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

}  // namespace okdd
