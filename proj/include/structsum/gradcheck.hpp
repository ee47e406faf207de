#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "structsum/tensor.hpp"

namespace structsum {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Max over coordinates of |a - n| / max(|a|, |n|, 1e-8), where a is the
// backward() gradient of scalar f at x and n the central difference
// (f(x + eps e) - f(x - eps e)) / 2 eps.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  f(leaf).backward();
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradGuard no_grad;
  Tensor probe = leaf.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double orig = probe.data()[i];
    probe.mutable_data()[i] = orig + eps;
    const double up = f(probe).item();
    probe.mutable_data()[i] = orig - eps;
    const double down = f(probe).item();
    probe.mutable_data()[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

// Same check for a loss depending on many parameter tensors at once.
// Perturbs each parameter in place; `loss` must read the parameters fresh
// on every call. The optional stride samples every k-th coordinate.
inline double grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params, double eps,
                                std::size_t stride = 1) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss().item();
      values[i] = orig - eps;
      const double down = loss().item();
      values[i] = orig;
      worst = std::max(worst, relative_error(analytic[t][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace structsum
