#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/tape.hpp"

namespace dlnet::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::span<Parameter<T>* const> params) {
    for (const Parameter<T>* p : params) {
      m.emplace_back(p->value.dims(), T{0});
      v.emplace_back(p->value.dims(), T{0});
    }
  }
};

/// One Adam update. A non-finite gradient aborts the whole step before any
/// parameter or moment is touched.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ConfigError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].size() != params[k]->value.size())
      throw ConfigError("adam_step: gradient shape mismatch for " + params[k]->name);
    if (!grads[k].all_finite())
      throw TrainingInstability("non-finite gradient for " + params[k]->name);
  }
  state.step += 1;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& w = params[k]->value;
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    const Tensor<T>& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace dlnet::nn
