#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::classifier {

struct AdamConfig {
  double learning_rate = 8e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update at step t (t ≥ 1):
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²,  θ ← θ − lr·m̂/(√v̂ + eps)
/// Moments are created on first use.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      const AdamConfig& cfg, std::size_t t) {
  if (t < 1) throw StepIndexError("Adam step index must be >= 1, got " + std::to_string(t));
  if (params.size() != grads.size()) throw DimensionError("Adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("Adam: state does not match parameter list");

  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (g.shape() != p.shape() || m.shape() != p.shape()) {
      throw DimensionError("Adam: shape mismatch for parameter " + std::to_string(i) + ": " +
                           shape_str(p.shape()) + " vs gradient " + shape_str(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace adaptune::classifier
