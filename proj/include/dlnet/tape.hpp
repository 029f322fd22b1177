#pragma once

// Reverse-mode gradient tape over batched tensors.
//
// Activations on the tape are 2-D [batch, features]; parameters keep their
// natural shape. Every op computes its value eagerly and, when the tape is
// recording, stores a closure that pushes the output gradient back to its
// inputs. backward() visits the closures in exact reverse creation order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/tensor.hpp"

namespace dlnet::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool prunable = false;
};

enum class DropoutMode { Train, Stochastic, Deterministic };

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

template <class T>
class GradTape {
 public:
  using Backward = std::function<void(GradTape&, const Tensor<T>&)>;

  explicit GradTape(bool record = true) : record_(record) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, false, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Leaf for a parameter. Repeated calls for the same parameter return the
  /// same node, so its gradient accumulates in one place.
  Var param(const Parameter<T>& p) {
    for (const auto& [ptr, id] : leaves_)
      if (ptr == &p) return Var{id};
    nodes_.push_back(Node{{}, &p.value, {}, false, record_, nullptr});
    leaves_.emplace_back(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Appends an op result. `inputs` decide whether the result needs a gradient.
  Var push(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var push(Tensor<T> value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (record_)
      for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, needs,
                          needs ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  /// Gradient accumulator of a node, zero-initialized on first access.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(v).dims(), T{0});
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (!record_) throw UsageError("backward on a tape that was not recording");
    if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size())
      throw UsageError("backward called before any forward was recorded");
    if (value(loss).size() != 1) throw UsageError("backward requires a scalar loss");
    grad(loss).fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
    backward_done_ = true;
  }

  bool has_backward() const { return backward_done_; }

  /// Accumulated gradient of a parameter, or nullptr if it was unreachable.
  const Tensor<T>* gradient(const Parameter<T>& p) const {
    for (const auto& [ptr, id] : leaves_)
      if (ptr == &p) return nodes_[id].has_grad ? &nodes_[id].grad : nullptr;
    return nullptr;
  }

  /// Gradients aligned with `params`; unreachable parameters get zeros.
  std::vector<Tensor<T>> gradients(std::span<Parameter<T>* const> params) const {
    if (!backward_done_) throw UsageError("gradients requested before backward");
    std::vector<Tensor<T>> out;
    out.reserve(params.size());
    for (const Parameter<T>* p : params) {
      const Tensor<T>* g = gradient(*p);
      out.push_back(g ? *g : Tensor<T>(p->value.dims(), T{0}));
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external;
    Tensor<T> grad;
    bool has_grad;
    bool requires_grad;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter<T>*, std::size_t>> leaves_;
  bool record_;
  bool backward_done_ = false;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

template <class T>
std::size_t batch_of(const Tensor<T>& x) {
  return x.rank() >= 2 ? x.dim(0) : 1;
}

template <class T>
std::size_t width_of(const Tensor<T>& x) {
  return x.cols();
}

template <class T>
Tensor<T> make2d(std::size_t b, std::size_t n, T fill = T{0}) {
  return Tensor<T>({b, n}, fill);
}

}  // namespace detail

/// y = x * W^T + b, x [B,n], W [m,n], b [m].
template <class T>
Var linear(GradTape<T>& t, Var x, Var w, Var b) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& wv = t.value(w);
  const Tensor<T>& bv = t.value(b);
  detail::require(wv.rank() == 2, "linear weight must be 2-D, got " + dims_string(wv.dims()));
  const std::size_t B = detail::batch_of(xv), n = xv.cols(), m = wv.dim(0);
  detail::require(wv.dim(1) == n, "linear input width " + std::to_string(n) +
                                      " does not match weight " + dims_string(wv.dims()));
  detail::require(bv.size() == m, "linear bias length " + std::to_string(bv.size()) +
                                      " does not match output dim " + std::to_string(m));
  std::vector<T> wt(n * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) wt[j * m + i] = wv[i * n + j];
  Tensor<T> y = detail::make2d<T>(B, m);
  for (std::size_t r = 0; r < B; ++r) {
    T* yr = &y[r * m];
    for (std::size_t i = 0; i < m; ++i) yr[i] = bv[i];
    const T* xr = &xv[r * n];
    for (std::size_t j = 0; j < n; ++j) {
      const T xj = xr[j];
      const T* wj = &wt[j * m];
      for (std::size_t i = 0; i < m; ++i) yr[i] += xj * wj[i];
    }
  }
  return t.push(std::move(y), {x, w, b}, [x, w, b, B, n, m](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& wv = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < m; ++i) {
          const T g = gy[r * m + i];
          const T* wi = &wv[i * n];
          T* gxr = &gx[r * n];
          for (std::size_t j = 0; j < n; ++j) gxr[j] += g * wi[j];
        }
    }
    if (tp.requires_grad(w)) {
      Tensor<T>& gw = tp.grad(w);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < m; ++i) {
          const T g = gy[r * m + i];
          const T* xr = &xv[r * n];
          T* gwi = &gw[i * n];
          for (std::size_t j = 0; j < n; ++j) gwi[j] += g * xr[j];
        }
    }
    if (tp.requires_grad(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < m; ++i) gb[i] += gy[r * m + i];
    }
  });
}

/// y = x * V, x [B,n], V [n,k].
template <class T>
Var matmul(GradTape<T>& t, Var x, Var v) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& vv = t.value(v);
  detail::require(vv.rank() == 2 && vv.dim(0) == xv.cols(),
                  "matmul shape mismatch " + dims_string(xv.dims()) + " x " + dims_string(vv.dims()));
  const std::size_t B = detail::batch_of(xv), n = xv.cols(), k = vv.dim(1);
  Tensor<T> y = detail::make2d<T>(B, k);
  for (std::size_t r = 0; r < B; ++r) {
    T* yr = &y[r * k];
    for (std::size_t j = 0; j < n; ++j) {
      const T xj = xv[r * n + j];
      const T* vj = &vv[j * k];
      for (std::size_t c = 0; c < k; ++c) yr[c] += xj * vj[c];
    }
  }
  return t.push(std::move(y), {x, v}, [x, v, B, n, k](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& vv = tp.value(v);
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) {
          T acc{0};
          for (std::size_t c = 0; c < k; ++c) acc += gy[r * k + c] * vv[j * k + c];
          gx[r * n + j] += acc;
        }
    }
    if (tp.requires_grad(v)) {
      Tensor<T>& gv = tp.grad(v);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) {
          const T xj = xv[r * n + j];
          for (std::size_t c = 0; c < k; ++c) gv[j * k + c] += xj * gy[r * k + c];
        }
    }
  });
}

/// y = x * U^T without bias, x [B,k], U [m,k].
template <class T>
Var matmul_nt(GradTape<T>& t, Var x, Var u) {
  const Tensor<T>& uv = t.value(u);
  detail::require(uv.rank() == 2, "matmul_nt weight must be 2-D");
  Var zero = t.constant(Tensor<T>({uv.dim(0)}, T{0}));
  return linear(t, x, u, zero);
}

/// Row-wise LayerNorm with population variance.
template <class T>
Var layernorm(GradTape<T>& t, Var x, Var gain, Var bias, T eps = T(1e-5)) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& gv = t.value(gain);
  const Tensor<T>& bv = t.value(bias);
  const std::size_t B = detail::batch_of(xv), n = xv.cols();
  detail::require(n > 0, "layernorm over an empty row");
  detail::require(gv.size() == n && bv.size() == n,
                  "layernorm params must have length " + std::to_string(n));
  Tensor<T> y = detail::make2d<T>(B, n);
  std::vector<T> xhat(B * n), inv_std(B);
  for (std::size_t r = 0; r < B; ++r) {
    const T* xr = &xv[r * n];
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T dx = xr[j] - mean;
      var += dx * dx;
    }
    var /= static_cast<T>(n);
    const T inv = T{1} / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mean) * inv;
      xhat[r * n + j] = h;
      y[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return t.push(std::move(y), {x, gain, bias},
                [x, gain, bias, B, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    GradTape<T>& tp, const Tensor<T>& gy) {
                  const Tensor<T>& gv = tp.value(gain);
                  if (tp.requires_grad(x)) {
                    Tensor<T>& gx = tp.grad(x);
                    std::vector<T> dh(n);
                    for (std::size_t r = 0; r < B; ++r) {
                      T mean_dh{0}, mean_dh_h{0};
                      for (std::size_t j = 0; j < n; ++j) {
                        dh[j] = gy[r * n + j] * gv[j];
                        mean_dh += dh[j];
                        mean_dh_h += dh[j] * xhat[r * n + j];
                      }
                      mean_dh /= static_cast<T>(n);
                      mean_dh_h /= static_cast<T>(n);
                      for (std::size_t j = 0; j < n; ++j)
                        gx[r * n + j] += inv_std[r] * (dh[j] - mean_dh - xhat[r * n + j] * mean_dh_h);
                    }
                  }
                  if (tp.requires_grad(gain)) {
                    Tensor<T>& gg = tp.grad(gain);
                    for (std::size_t r = 0; r < B; ++r)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += gy[r * n + j] * xhat[r * n + j];
                  }
                  if (tp.requires_grad(bias)) {
                    Tensor<T>& gb = tp.grad(bias);
                    for (std::size_t r = 0; r < B; ++r)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
                  }
                });
}

template <class T>
Var relu(GradTape<T>& t, Var x) {
  Tensor<T> y = t.value(x);
  for (T& v : y.storage()) v = v > T{0} ? v : T{0};
  return t.push(std::move(y), {x}, [x](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > T{0}) gx[i] += gy[i];
  });
}

template <class T>
Var tanh(GradTape<T>& t, Var x) {
  Tensor<T> y = t.value(x);
  for (T& v : y.storage()) v = std::tanh(v);
  const std::size_t self = t.size();
  return t.push(std::move(y), {x}, [x, self](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& yv = tp.value(Var{self});
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (T{1} - yv[i] * yv[i]);
  });
}

/// Inverted dropout. Train and Stochastic draw a fresh mask; Deterministic is the identity.
template <class T>
Var dropout(GradTape<T>& t, Var x, double p, DropoutMode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0,1), got " + std::to_string(p));
  if (mode == DropoutMode::Deterministic || p == 0.0) return x;
  const Tensor<T>& xv = t.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(xv.size());
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = rng.uniform() < p ? T{0} : keep_scale;
    y[i] *= mask[i];
  }
  return t.push(std::move(y), {x}, [x, mask = std::move(mask)](GradTape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
  });
}

/// y[b,j] = x[b,j] * v[j].
template <class T>
Var mul_row(GradTape<T>& t, Var x, Var v) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& vv = t.value(v);
  const std::size_t B = detail::batch_of(xv), n = xv.cols();
  detail::require(vv.size() == n, "mul_row length mismatch");
  Tensor<T> y = detail::make2d<T>(B, n);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xv[r * n + j] * vv[j];
  return t.push(std::move(y), {x, v}, [x, v, B, n](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& xv = tp.value(x);
    const Tensor<T>& vv = tp.value(v);
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gy[r * n + j] * vv[j];
    }
    if (tp.requires_grad(v)) {
      Tensor<T>& gv = tp.grad(v);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) gv[j] += gy[r * n + j] * xv[r * n + j];
    }
  });
}

/// y[b,j] = x[b,j] + c[b], c [B,1].
template <class T>
Var add_col(GradTape<T>& t, Var x, Var c) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& cv = t.value(c);
  const std::size_t B = detail::batch_of(xv), n = xv.cols();
  detail::require(cv.size() == B, "add_col expects one value per row");
  Tensor<T> y = detail::make2d<T>(B, n);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xv[r * n + j] + cv[r];
  return t.push(std::move(y), {x, c}, [x, c, B, n](GradTape<T>& tp, const Tensor<T>& gy) {
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    }
    if (tp.requires_grad(c)) {
      Tensor<T>& gc = tp.grad(c);
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < n; ++j) gc[r] += gy[r * n + j];
    }
  });
}

/// y = s * x for a single-element tensor s.
template <class T>
Var scale(GradTape<T>& t, Var x, Var s) {
  const Tensor<T>& sv = t.value(s);
  detail::require(sv.size() == 1, "scale expects a scalar");
  Tensor<T> y = t.value(x);
  const T k = sv[0];
  for (T& v : y.storage()) v *= k;
  return t.push(std::move(y), {x, s}, [x, s](GradTape<T>& tp, const Tensor<T>& gy) {
    const T k = tp.value(s)[0];
    if (tp.requires_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * k;
    }
    if (tp.requires_grad(s)) {
      const Tensor<T>& xv = tp.value(x);
      T acc{0};
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
      tp.grad(s)[0] += acc;
    }
  });
}

/// y = sum_i coeffs[i] * xs[i], all same shape; evaluated left to right.
template <class T>
Var lincomb(GradTape<T>& t, std::vector<Var> xs, std::vector<T> coeffs) {
  detail::require(!xs.empty() && xs.size() == coeffs.size(), "lincomb needs matching terms");
  Tensor<T> y = t.value(xs[0]);
  for (T& v : y.storage()) v *= coeffs[0];
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const Tensor<T>& xk = t.value(xs[k]);
    detail::require(xk.size() == y.size(), "lincomb shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += coeffs[k] * xk[i];
  }
  const std::vector<Var> inputs = xs;
  return t.push(std::move(y), std::span<const Var>(inputs), [xs, coeffs](GradTape<T>& tp, const Tensor<T>& gy) {
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!tp.requires_grad(xs[k])) continue;
      Tensor<T>& gx = tp.grad(xs[k]);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += coeffs[k] * gy[i];
    }
  });
}

/// Per-row mean, [B,n] -> [B,1].
template <class T>
Var row_mean(GradTape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  const std::size_t B = detail::batch_of(xv), n = xv.cols();
  Tensor<T> y = detail::make2d<T>(B, 1);
  for (std::size_t r = 0; r < B; ++r) {
    T acc{0};
    for (std::size_t j = 0; j < n; ++j) acc += xv[r * n + j];
    y[r] = acc / static_cast<T>(n);
  }
  return t.push(std::move(y), {x}, [x, B, n](GradTape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gy[r] / static_cast<T>(n);
  });
}

template <class T>
Var sum(GradTape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  T acc{0};
  for (T v : xv.data()) acc += v;
  return t.push(Tensor<T>({1, 1}, acc), {x}, [x](GradTape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0];
  });
}

/// Mean squared difference over all elements.
template <class T>
Var mse(GradTape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  detail::require(av.size() == bv.size(), "mse operands differ in size");
  T acc{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  const T inv_n = T{1} / static_cast<T>(av.size());
  return t.push(Tensor<T>({1, 1}, acc * inv_n), {a, b}, [a, b, inv_n](GradTape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& av = tp.value(a);
    const Tensor<T>& bv = tp.value(b);
    const T k = T{2} * inv_n * gy[0];
    if (tp.requires_grad(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (tp.requires_grad(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

/// Mean over rows of 1 - cos(a_row, b_row); rows with a norm below 1e-12 contribute 0.
template <class T>
Var cosine_loss(GradTape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  detail::require(av.size() == bv.size(), "cosine operands differ in size");
  const std::size_t B = detail::batch_of(av), n = av.cols();
  struct RowStats {
    T na, nb, cos;
    bool active;
  };
  std::vector<RowStats> rows(B);
  T acc{0};
  for (std::size_t r = 0; r < B; ++r) {
    T dot{0}, saa{0}, sbb{0};
    for (std::size_t j = 0; j < n; ++j) {
      dot += av[r * n + j] * bv[r * n + j];
      saa += av[r * n + j] * av[r * n + j];
      sbb += bv[r * n + j] * bv[r * n + j];
    }
    const T na = std::sqrt(saa), nb = std::sqrt(sbb);
    if (na < T(1e-12) || nb < T(1e-12)) {
      rows[r] = {na, nb, T{1}, false};
      continue;
    }
    const T c = dot / (na * nb);
    rows[r] = {na, nb, c, true};
    acc += T{1} - c;
  }
  const T inv_b = T{1} / static_cast<T>(B);
  return t.push(Tensor<T>({1, 1}, acc * inv_b), {a, b},
                [a, b, B, n, inv_b, rows = std::move(rows)](GradTape<T>& tp, const Tensor<T>& gy) {
                  const Tensor<T>& av = tp.value(a);
                  const Tensor<T>& bv = tp.value(b);
                  const T k = -gy[0] * inv_b;
                  for (std::size_t r = 0; r < B; ++r) {
                    const RowStats& s = rows[r];
                    if (!s.active) continue;
                    const T inv_ab = T{1} / (s.na * s.nb);
                    if (tp.requires_grad(a)) {
                      Tensor<T>& ga = tp.grad(a);
                      for (std::size_t j = 0; j < n; ++j)
                        ga[r * n + j] += k * (bv[r * n + j] * inv_ab - s.cos * av[r * n + j] / (s.na * s.na));
                    }
                    if (tp.requires_grad(b)) {
                      Tensor<T>& gb = tp.grad(b);
                      for (std::size_t j = 0; j < n; ++j)
                        gb[r * n + j] += k * (av[r * n + j] * inv_ab - s.cos * bv[r * n + j] / (s.nb * s.nb));
                    }
                  }
                });
}

/// Throws TrainingInstability if the node holds any non-finite value.
template <class T>
void require_finite(const GradTape<T>& t, Var v, const char* what) {
  if (!t.value(v).all_finite()) throw TrainingInstability(std::string("non-finite values in ") + what);
}

}  // namespace dlnet::nn
