#pragma once

#include <cmath>
#include <string>

#include "dlnet/rng.hpp"
#include "dlnet/tape.hpp"
#include "dlnet/tensor.hpp"

namespace dlnet::nn {

enum class LayerKind { Linear, LayerNorm };
enum class Activation { ReLU, Tanh };

/// Linear: weight [out,in], bias [out]. LayerNorm: weight is the gain [n], bias [n].
template <class T>
struct LayerParams {
  LayerKind kind = LayerKind::Linear;
  Parameter<T> weight;
  Parameter<T> bias;

  std::size_t in_dim() const { return kind == LayerKind::Linear ? weight.value.dim(1) : weight.value.size(); }
  std::size_t out_dim() const { return kind == LayerKind::Linear ? weight.value.dim(0) : weight.value.size(); }
};

/// PyTorch-style init: weight and bias uniform in +-1/sqrt(in).
template <class T>
LayerParams<T> make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LayerParams<T> p;
  p.kind = LayerKind::Linear;
  p.weight = {name + ".weight", Tensor<T>({out, in}), true};
  p.bias = {name + ".bias", Tensor<T>({out}), false};
  for (T& w : p.weight.value.storage()) w = static_cast<T>(rng.uniform(-bound, bound));
  for (T& b : p.bias.value.storage()) b = static_cast<T>(rng.uniform(-bound, bound));
  return p;
}

template <class T>
LayerParams<T> make_layernorm(const std::string& name, std::size_t n) {
  LayerParams<T> p;
  p.kind = LayerKind::LayerNorm;
  p.weight = {name + ".gain", Tensor<T>({n}, T{1}), false};
  p.bias = {name + ".bias", Tensor<T>({n}, T{0}), false};
  return p;
}

// Taped layer application.

template <class T>
Var apply(GradTape<T>& t, Var x, const LayerParams<T>& p, T eps = T(1e-5)) {
  if (p.kind == LayerKind::Linear) return linear(t, x, t.param(p.weight), t.param(p.bias));
  return layernorm(t, x, t.param(p.weight), t.param(p.bias), eps);
}

template <class T>
Var activate(GradTape<T>& t, Var x, Activation kind) {
  return kind == Activation::ReLU ? relu(t, x) : nn::tanh(t, x);
}

// Value-level forms. Accept a vector [n] or a batch [B,n] and return the same rank.

namespace detail {

template <class T>
Tensor<T> as_batch(const Tensor<T>& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return x.reshaped({1, x.size()});
  throw ConfigError("expected a 1-D or 2-D tensor, got " + dims_string(x.dims()));
}

template <class T>
Tensor<T> like_input(const Tensor<T>& y, const Tensor<T>& x) {
  return x.rank() == 1 ? y.reshaped({y.size()}) : y;
}

}  // namespace detail

template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const LayerParams<T>& p) {
  if (p.kind != LayerKind::Linear) throw ConfigError("linear_forward on a non-linear layer");
  GradTape<T> t(false);
  Var y = linear(t, t.constant(detail::as_batch(x)), t.param(p.weight), t.param(p.bias));
  return detail::like_input(t.value(y), x);
}

template <class T>
Tensor<T> layernorm_forward(const Tensor<T>& x, const LayerParams<T>& p, T eps = T(1e-5)) {
  if (p.kind != LayerKind::LayerNorm) throw ConfigError("layernorm_forward on a non-norm layer");
  GradTape<T> t(false);
  Var y = layernorm(t, t.constant(detail::as_batch(x)), t.param(p.weight), t.param(p.bias), eps);
  return detail::like_input(t.value(y), x);
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y = x;
  for (T& v : y.storage()) v = kind == Activation::ReLU ? (v > T{0} ? v : T{0}) : std::tanh(v);
  return y;
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, DropoutMode mode, Rng& rng) {
  GradTape<T> t(false);
  Var y = dropout(t, t.constant(detail::as_batch(x)), p, mode, rng);
  return detail::like_input(t.value(y), x);
}

}  // namespace dlnet::nn
