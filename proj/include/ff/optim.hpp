#pragma once

#include <cmath>
#include <vector>

#include "ff/error.hpp"
#include "ff/model.hpp"

namespace ff {

// cosine annealing by step/epoch index; t past t_max clamps to lr_min
inline double cosine_lr(size_t t, size_t t_max, double lr_max, double lr_min = 0.0) {
  if (t_max == 0) throw ContractError("cosine_lr: t_max must be positive");
  if (t > t_max) return lr_min;
  const double pi = 3.14159265358979323846;
  return lr_min + 0.5 * (lr_max - lr_min) *
                      (1.0 + std::cos(pi * static_cast<double>(t) / static_cast<double>(t_max)));
}

// One decoupled-weight-decay Adam update over a flat buffer:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   w <- w - lr * mhat / (sqrt(vhat) + eps) - lr * wd * w
inline void adamw_update(double* w, const double* g, double* m, double* v, size_t n, size_t t,
                         double lr, double beta1, double beta2, double eps, double wd) {
  if (t == 0) throw ContractError("adamw_update: step index starts at 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * w[i];
  }
}

// moment state aligned with Model::named
struct AdamWState {
  std::vector<std::vector<double>> m, v;
  size_t t = 0;

  static AdamWState for_model(const Model& model) {
    AdamWState s;
    s.m.reserve(model.named.size());
    s.v.reserve(model.named.size());
    for (const auto& [name, tns] : model.named) {
      s.m.emplace_back(tns.size(), 0.0);
      s.v.emplace_back(tns.size(), 0.0);
    }
    return s;
  }
};

struct AdamWParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// grads[i] must be aligned with model.named[i]
inline void adamw_step(Model& model, const std::vector<std::vector<double>>& grads,
                       AdamWState& state, const AdamWParams& hp) {
  if (grads.size() != model.named.size())
    throw DimensionError("adamw_step: gradient list does not match the parameter list");
  state.t += 1;
  for (size_t i = 0; i < model.named.size(); ++i) {
    Tensor& w = model.named[i].second;
    if (grads[i].size() != w.size())
      throw DimensionError("adamw_step: gradient shape mismatch for " + model.named[i].first);
    adamw_update(w.data(), grads[i].data(), state.m[i].data(), state.v[i].data(), w.size(),
                 state.t, hp.lr, hp.beta1, hp.beta2, hp.eps, hp.weight_decay);
  }
}

}  // namespace ff
