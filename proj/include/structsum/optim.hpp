#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "structsum/error.hpp"
#include "structsum/tensor.hpp"

namespace structsum {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update. Gradients are left in place; the caller
// zeroes them.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad() && params[i].numel() > 0) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.m[i].size() != params[i].numel()) throw ShapeError("adam_step: moment buffer shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      if (state.lr == 0.0) continue;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

inline double global_grad_norm(std::span<const Tensor> params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double c = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= c;
  }
  return norm;
}

}  // namespace structsum
