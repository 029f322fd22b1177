#pragma once

// Liquid-network forecasters.
//
// Both model kinds share the encoder/decoder blocks and the (tau -> tau')
// windowed interface; they differ only in how the latent state evolves:
//
//   teacher:  dh/dt = -alpha*h + beta*tanh(W h + u),  integrated with RK4 over [0, T]
//   student:  h <- h + dt*(-alpha*h + beta*tanh(W' h + u)),  K explicit Euler steps
//             W' = diag(w_diag) + (1/r) U V^T, applied without forming W'
//
// u is the mean of the input window replicated across the d latent units.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/layers.hpp"
#include "dlnet/rng.hpp"
#include "dlnet/tape.hpp"

namespace dlnet::models {

using nn::DropoutMode;
using nn::GradTape;
using nn::LayerParams;
using nn::LayerKind;
using nn::Parameter;
using nn::Var;

struct Widths {
  std::size_t e1 = 0, e2 = 0, e3 = 0;
  static Widths for_hidden(std::size_t d) { return {2 * d, 2 * d, d}; }
  bool operator==(const Widths&) const = default;
};

template <class T>
struct Encoder {
  LayerParams<T> fc1, norm1{LayerKind::LayerNorm, {}, {}}, fc2, norm2{LayerKind::LayerNorm, {}, {}};
};

template <class T>
struct Decoder {
  LayerParams<T> fc1, norm1{LayerKind::LayerNorm, {}, {}}, fc2, norm2{LayerKind::LayerNorm, {}, {}}, fc3;
};

template <class T>
struct TeacherDynamics {
  Parameter<T> alpha, beta, W;
  double t_end = 1.0;
  std::size_t steps = 20;
};

template <class T>
struct StudentDynamics {
  Parameter<T> alpha, beta, w_diag, U, V;
  std::size_t rank = 4;
  double dt = 0.125;
  std::size_t steps = 8;
};

struct TeacherConfig {
  std::size_t tau = 100, tau_prime = 100, hidden = 128;
  std::optional<Widths> widths;
  double t_end = 1.0;
  std::size_t ode_steps = 20;
  double dropout = 0.1;
};

struct StudentConfig {
  std::size_t tau = 100, tau_prime = 100, hidden = 16;
  std::optional<Widths> widths;
  std::size_t rank = 4;
  std::size_t euler_steps = 8;
  double t_end = 1.0;
  double dropout = 0.1;
};

template <class T>
struct TeacherModel {
  std::size_t tau = 0, tau_prime = 0, hidden = 0;
  Widths widths;
  double dropout = 0.1;
  Encoder<T> encoder;
  TeacherDynamics<T> dynamics;
  Decoder<T> decoder;

  std::vector<Parameter<T>*> parameters() {
    return {&encoder.fc1.weight, &encoder.fc1.bias, &encoder.norm1.weight, &encoder.norm1.bias,
            &encoder.fc2.weight, &encoder.fc2.bias, &encoder.norm2.weight, &encoder.norm2.bias,
            &dynamics.alpha,     &dynamics.beta,    &dynamics.W,           &decoder.fc1.weight,
            &decoder.fc1.bias,   &decoder.norm1.weight, &decoder.norm1.bias, &decoder.fc2.weight,
            &decoder.fc2.bias,   &decoder.norm2.weight, &decoder.norm2.bias, &decoder.fc3.weight,
            &decoder.fc3.bias};
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<TeacherModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
};

template <class T>
struct StudentModel {
  std::size_t tau = 0, tau_prime = 0, hidden = 0;
  Widths widths;
  double dropout = 0.1;
  Encoder<T> encoder;
  StudentDynamics<T> dynamics;
  Decoder<T> decoder;

  std::vector<Parameter<T>*> parameters() {
    return {&encoder.fc1.weight, &encoder.fc1.bias, &encoder.norm1.weight, &encoder.norm1.bias,
            &encoder.fc2.weight, &encoder.fc2.bias, &encoder.norm2.weight, &encoder.norm2.bias,
            &dynamics.alpha,     &dynamics.beta,    &dynamics.w_diag,      &dynamics.U,
            &dynamics.V,         &decoder.fc1.weight, &decoder.fc1.bias,   &decoder.norm1.weight,
            &decoder.norm1.bias, &decoder.fc2.weight, &decoder.fc2.bias,   &decoder.norm2.weight,
            &decoder.norm2.bias, &decoder.fc3.weight, &decoder.fc3.bias};
  }
  std::vector<const Parameter<T>*> parameters() const {
    auto ps = const_cast<StudentModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
};

inline bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Rank actually used for a student of width d: min(r, d-1), at least 1.
inline std::size_t effective_rank(std::size_t requested, std::size_t d) {
  const std::size_t cap = d > 1 ? d - 1 : 1;
  return std::max<std::size_t>(1, std::min(requested, cap));
}

namespace detail {

template <class T>
Encoder<T> make_encoder(std::size_t tau, std::size_t d, const Widths& w, Rng& rng) {
  Encoder<T> e;
  e.fc1 = nn::make_linear<T>("encoder.fc1", tau, w.e1, rng);
  e.norm1 = nn::make_layernorm<T>("encoder.norm1", w.e1);
  e.fc2 = nn::make_linear<T>("encoder.fc2", w.e1, d, rng);
  e.norm2 = nn::make_layernorm<T>("encoder.norm2", d);
  return e;
}

template <class T>
Decoder<T> make_decoder(std::size_t d, std::size_t tau_prime, const Widths& w, Rng& rng) {
  Decoder<T> dec;
  dec.fc1 = nn::make_linear<T>("decoder.fc1", d, w.e2, rng);
  dec.norm1 = nn::make_layernorm<T>("decoder.norm1", w.e2);
  dec.fc2 = nn::make_linear<T>("decoder.fc2", w.e2, w.e3, rng);
  dec.norm2 = nn::make_layernorm<T>("decoder.norm2", w.e3);
  dec.fc3 = nn::make_linear<T>("decoder.fc3", w.e3, tau_prime, rng);
  return dec;
}

template <class T>
Parameter<T> scalar_param(const std::string& name, double v) {
  return {name, Tensor<T>({1}, static_cast<T>(v)), false};
}

template <class T>
Parameter<T> uniform_param(const std::string& name, Dims dims, double lo, double hi, bool prunable, Rng& rng) {
  Parameter<T> p{name, Tensor<T>(std::move(dims)), prunable};
  for (T& v : p.value.storage()) v = static_cast<T>(rng.uniform(lo, hi));
  return p;
}

inline void validate_io(std::size_t tau, std::size_t tau_prime, std::size_t d) {
  if (tau == 0 || tau_prime == 0) throw ConfigError("window lengths must be positive");
  if (d == 0) throw ConfigError("hidden dimension must be positive");
}

}  // namespace detail

/// Teacher with alpha = beta = 1 and W ~ U(-1/sqrt(d), 1/sqrt(d)).
template <class T>
TeacherModel<T> make_teacher(const TeacherConfig& cfg, Rng& rng) {
  detail::validate_io(cfg.tau, cfg.tau_prime, cfg.hidden);
  if (!(cfg.t_end > 0.0)) throw ConfigError("integration endpoint T must be > 0");
  if (cfg.ode_steps < 1) throw ConfigError("ode steps must be >= 1");
  const std::size_t d = cfg.hidden;
  TeacherModel<T> m;
  m.tau = cfg.tau;
  m.tau_prime = cfg.tau_prime;
  m.hidden = d;
  m.widths = cfg.widths.value_or(Widths::for_hidden(d));
  m.dropout = cfg.dropout;
  m.encoder = detail::make_encoder<T>(cfg.tau, d, m.widths, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  m.dynamics.alpha = detail::scalar_param<T>("dynamics.alpha", 1.0);
  m.dynamics.beta = detail::scalar_param<T>("dynamics.beta", 1.0);
  m.dynamics.W = detail::uniform_param<T>("dynamics.W", {d, d}, -bound, bound, true, rng);
  m.dynamics.t_end = cfg.t_end;
  m.dynamics.steps = cfg.ode_steps;
  m.decoder = detail::make_decoder<T>(d, cfg.tau_prime, m.widths, rng);
  return m;
}

/// Student with U, V ~ U(-1/sqrt(d), 1/sqrt(d)), w_diag ~ U(-0.5, 0). alpha and
/// beta start at the teacher's values when given, else 1.
template <class T>
StudentModel<T> make_student(const StudentConfig& cfg, Rng& rng, std::optional<std::pair<double, double>> inherit = {}) {
  detail::validate_io(cfg.tau, cfg.tau_prime, cfg.hidden);
  if (!is_power_of_two(cfg.hidden) || cfg.hidden < 2)
    throw ConfigError("student hidden dimension must be a power of two >= 2, got " + std::to_string(cfg.hidden));
  if (cfg.euler_steps < 1) throw ConfigError("Euler step count must be >= 1");
  if (!(cfg.t_end > 0.0)) throw ConfigError("integration endpoint T must be > 0");
  const std::size_t d = cfg.hidden;
  const std::size_t r = effective_rank(cfg.rank, d);
  StudentModel<T> m;
  m.tau = cfg.tau;
  m.tau_prime = cfg.tau_prime;
  m.hidden = d;
  m.widths = cfg.widths.value_or(Widths::for_hidden(d));
  m.dropout = cfg.dropout;
  m.encoder = detail::make_encoder<T>(cfg.tau, d, m.widths, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  const auto [a0, b0] = inherit.value_or(std::pair<double, double>{1.0, 1.0});
  m.dynamics.alpha = detail::scalar_param<T>("dynamics.alpha", a0);
  m.dynamics.beta = detail::scalar_param<T>("dynamics.beta", b0);
  m.dynamics.w_diag = detail::uniform_param<T>("dynamics.w_diag", {d}, -0.5, 0.0, true, rng);
  m.dynamics.U = detail::uniform_param<T>("dynamics.U", {d, r}, -bound, bound, true, rng);
  m.dynamics.V = detail::uniform_param<T>("dynamics.V", {d, r}, -bound, bound, true, rng);
  m.dynamics.rank = r;
  m.dynamics.steps = cfg.euler_steps;
  m.dynamics.dt = cfg.t_end / static_cast<double>(cfg.euler_steps);
  m.decoder = detail::make_decoder<T>(d, cfg.tau_prime, m.widths, rng);
  return m;
}

/// Activation boundaries observed during a forward pass. These are exactly
/// the points where the int8 path quantizes a tensor.
enum class Boundary : int {
  Input = 0,
  EncoderHidden,
  State,
  LowRankProjection,
  DecoderInput,
  DecoderHidden1,
  DecoderHidden2,
  Output,
};
inline constexpr int kBoundaryCount = 8;

inline const char* boundary_name(Boundary b) {
  switch (b) {
    case Boundary::Input: return "input";
    case Boundary::EncoderHidden: return "encoder_hidden";
    case Boundary::State: return "state";
    case Boundary::LowRankProjection: return "lowrank_projection";
    case Boundary::DecoderInput: return "decoder_input";
    case Boundary::DecoderHidden1: return "decoder_hidden1";
    case Boundary::DecoderHidden2: return "decoder_hidden2";
    case Boundary::Output: return "output";
  }
  return "?";
}

template <class T>
using Observer = std::function<void(Boundary, const Tensor<T>&)>;

namespace detail {

template <class T>
void observe(const Observer<T>* obs, Boundary b, const GradTape<T>& t, Var v) {
  if (obs && *obs) (*obs)(b, t.value(v));
}

}  // namespace detail

// Taped building blocks. Activations are [B, features].

template <class T>
Var encode(GradTape<T>& t, const Encoder<T>& e, Var x, double p, DropoutMode mode, Rng& rng,
           const Observer<T>* obs = nullptr) {
  detail::observe(obs, Boundary::Input, t, x);
  Var a = nn::apply(t, x, e.fc1);
  a = nn::apply(t, a, e.norm1);
  a = nn::relu(t, a);
  a = nn::dropout(t, a, p, mode, rng);
  detail::observe(obs, Boundary::EncoderHidden, t, a);
  a = nn::apply(t, a, e.fc2);
  a = nn::apply(t, a, e.norm2);
  return nn::tanh(t, a);
}

template <class T>
Var decode(GradTape<T>& t, const Decoder<T>& dec, Var h, double p, DropoutMode mode, Rng& rng,
           const Observer<T>* obs = nullptr) {
  detail::observe(obs, Boundary::DecoderInput, t, h);
  Var a = nn::apply(t, h, dec.fc1);
  a = nn::apply(t, a, dec.norm1);
  a = nn::relu(t, a);
  a = nn::dropout(t, a, p, mode, rng);
  detail::observe(obs, Boundary::DecoderHidden1, t, a);
  a = nn::apply(t, a, dec.fc2);
  a = nn::apply(t, a, dec.norm2);
  a = nn::relu(t, a);
  detail::observe(obs, Boundary::DecoderHidden2, t, a);
  a = nn::apply(t, a, dec.fc3);
  detail::observe(obs, Boundary::Output, t, a);
  return a;
}

/// -alpha*h + beta*tanh(pre) given the pre-activation W h + u.
template <class T>
Var liquid_rhs(GradTape<T>& t, Var h, Var pre, Var alpha, Var beta) {
  Var act = nn::tanh(t, pre);
  return nn::lincomb(t, {nn::scale(t, act, beta), nn::scale(t, h, alpha)}, {T{1}, T{-1}});
}

template <class T>
Var teacher_deriv(GradTape<T>& t, const TeacherDynamics<T>& dyn, Var h, Var u) {
  Var wh = nn::matmul_nt(t, h, t.param(dyn.W));
  Var pre = nn::lincomb(t, {wh, u}, {T{1}, T{1}});
  return liquid_rhs(t, h, pre, t.param(dyn.alpha), t.param(dyn.beta));
}

/// Classical RK4 with fixed step T/steps.
template <class T>
Var integrate(GradTape<T>& t, const TeacherDynamics<T>& dyn, Var h0, Var u) {
  if (dyn.steps < 1) throw ConfigError("ode steps must be >= 1");
  if (!(dyn.t_end > 0.0)) throw ConfigError("integration endpoint T must be > 0");
  const T dt = static_cast<T>(dyn.t_end / static_cast<double>(dyn.steps));
  const T half = dt / T{2};
  Var h = h0;
  for (std::size_t s = 0; s < dyn.steps; ++s) {
    Var k1 = teacher_deriv(t, dyn, h, u);
    Var k2 = teacher_deriv(t, dyn, nn::lincomb(t, {h, k1}, {T{1}, half}), u);
    Var k3 = teacher_deriv(t, dyn, nn::lincomb(t, {h, k2}, {T{1}, half}), u);
    Var k4 = teacher_deriv(t, dyn, nn::lincomb(t, {h, k3}, {T{1}, dt}), u);
    h = nn::lincomb(t, {h, k1, k2, k3, k4}, {T{1}, dt / T{6}, dt / T{3}, dt / T{3}, dt / T{6}});
    nn::require_finite(t, h, "ODE state");
  }
  return h;
}

/// diag(w_diag) h + (1/r) U (V^T h), O(d r).
template <class T>
Var lowrank_apply(GradTape<T>& t, Var h, Var w_diag, Var U, Var V, std::size_t r,
                  const Observer<T>* obs = nullptr) {
  Var diag = nn::mul_row(t, h, w_diag);
  Var proj = nn::matmul(t, h, V);
  detail::observe(obs, Boundary::LowRankProjection, t, proj);
  Var back = nn::matmul_nt(t, proj, U);
  return nn::lincomb(t, {diag, back}, {T{1}, T{1} / static_cast<T>(r)});
}

template <class T>
Var rollout(GradTape<T>& t, const StudentDynamics<T>& dyn, Var h0, Var u, const Observer<T>* obs = nullptr) {
  if (dyn.steps < 1) throw ConfigError("Euler step count must be >= 1");
  const T dt = static_cast<T>(dyn.dt);
  Var wd = t.param(dyn.w_diag), U = t.param(dyn.U), V = t.param(dyn.V);
  Var alpha = t.param(dyn.alpha), beta = t.param(dyn.beta);
  Var h = h0;
  for (std::size_t s = 0; s < dyn.steps; ++s) {
    detail::observe(obs, Boundary::State, t, h);
    Var wh = lowrank_apply(t, h, wd, U, V, dyn.rank, obs);
    Var pre = nn::lincomb(t, {wh, u}, {T{1}, T{1}});
    Var f = liquid_rhs(t, h, pre, alpha, beta);
    h = nn::lincomb(t, {h, f}, {T{1}, dt});
    nn::require_finite(t, h, "Euler state");
  }
  return h;
}

/// Window mean replicated to [B, d].
template <class T>
Tensor<T> broadcast_mean(const Tensor<T>& x, std::size_t d) {
  const std::size_t B = x.rows(), n = x.cols();
  Tensor<T> u({B, d});
  for (std::size_t r = 0; r < B; ++r) {
    T acc{0};
    for (std::size_t j = 0; j < n; ++j) acc += x[r * n + j];
    const T mean = acc / static_cast<T>(n);
    for (std::size_t j = 0; j < d; ++j) u[r * d + j] = mean;
  }
  return u;
}

template <class T>
Var forward(GradTape<T>& t, const TeacherModel<T>& m, const Tensor<T>& x, DropoutMode mode, Rng& rng,
            const Observer<T>* obs = nullptr) {
  if (x.cols() != m.tau) throw InputError("window length " + std::to_string(x.cols()) + " != tau " + std::to_string(m.tau));
  Tensor<T> xb = nn::detail::as_batch(x);
  Var u = t.constant(broadcast_mean(xb, m.hidden));
  Var xin = t.constant(std::move(xb));
  Var h0 = encode(t, m.encoder, xin, m.dropout, mode, rng, obs);
  Var hT = integrate(t, m.dynamics, h0, u);
  return decode(t, m.decoder, hT, m.dropout, mode, rng, obs);
}

template <class T>
Var forward(GradTape<T>& t, const StudentModel<T>& m, const Tensor<T>& x, DropoutMode mode, Rng& rng,
            const Observer<T>* obs = nullptr) {
  if (x.cols() != m.tau) throw InputError("window length " + std::to_string(x.cols()) + " != tau " + std::to_string(m.tau));
  Tensor<T> xb = nn::detail::as_batch(x);
  Var u = t.constant(broadcast_mean(xb, m.hidden));
  Var xin = t.constant(std::move(xb));
  Var h0 = encode(t, m.encoder, xin, m.dropout, mode, rng, obs);
  Var hK = rollout(t, m.dynamics, h0, u, obs);
  return decode(t, m.decoder, hK, m.dropout, mode, rng, obs);
}

/// Batched inference without recording: X [B, tau] -> [B, tau'].
template <class T, class Model>
Tensor<T> predict(const Model& m, const Tensor<T>& X, DropoutMode mode, Rng& rng, const Observer<T>* obs = nullptr) {
  GradTape<T> t(false);
  Var y = forward(t, m, X, mode, rng, obs);
  return t.value(y);
}

// Single-vector operations.

template <class T>
Tensor<T> teacher_dynamics_deriv(const Tensor<T>& h, const TeacherDynamics<T>& dyn, const Tensor<T>& u) {
  const std::size_t d = dyn.W.value.dim(0);
  if (h.size() != d || u.size() != d) throw ConfigError("dynamics dims do not match d=" + std::to_string(d));
  GradTape<T> t(false);
  Var f = teacher_deriv(t, dyn, t.constant(h.reshaped({1, d})), t.constant(u.reshaped({1, d})));
  nn::require_finite(t, f, "ODE derivative");
  return t.value(f).reshaped({d});
}

template <class T>
Tensor<T> integrate_ode(const Tensor<T>& h0, const TeacherDynamics<T>& dyn, const Tensor<T>& u) {
  const std::size_t d = dyn.W.value.dim(0);
  if (h0.size() != d || u.size() != d) throw ConfigError("dynamics dims do not match d=" + std::to_string(d));
  GradTape<T> t(false);
  Var h = integrate(t, dyn, t.constant(h0.reshaped({1, d})), t.constant(u.reshaped({1, d})));
  return t.value(h).reshaped({d});
}

template <class T>
Tensor<T> euler_rollout(const Tensor<T>& h0, const StudentDynamics<T>& dyn, const Tensor<T>& u) {
  const std::size_t d = dyn.w_diag.value.size();
  if (h0.size() != d || u.size() != d) throw ConfigError("dynamics dims do not match d=" + std::to_string(d));
  GradTape<T> t(false);
  Var h = rollout(t, dyn, t.constant(h0.reshaped({1, d})), t.constant(u.reshaped({1, d})));
  return t.value(h).reshaped({d});
}

template <class T>
Tensor<T> lowrank_matvec(const Tensor<T>& w_diag, const Tensor<T>& U, const Tensor<T>& V, std::size_t r,
                         const Tensor<T>& h) {
  const std::size_t d = w_diag.size();
  if (h.size() != d || U.rank() != 2 || V.rank() != 2 || U.dim(0) != d || V.dim(0) != d || U.dim(1) != r ||
      V.dim(1) != r)
    throw ConfigError("lowrank_matvec dims inconsistent: d=" + std::to_string(d) + " U" + dims_string(U.dims()) +
                      " V" + dims_string(V.dims()) + " r=" + std::to_string(r));
  GradTape<T> t(false);
  Var y = lowrank_apply(t, t.constant(h.reshaped({1, d})), t.constant(w_diag), t.constant(U), t.constant(V), r);
  return t.value(y).reshaped({d});
}

/// One window in, tau' predictions out.
template <class T, class Model>
Tensor<T> model_forward(const Model& m, const Tensor<T>& x, DropoutMode mode, Rng& rng) {
  if (x.size() != m.tau) throw InputError("window length " + std::to_string(x.size()) + " != tau " + std::to_string(m.tau));
  return predict(m, x.reshaped({1, m.tau}), mode, rng).reshaped({m.tau_prime});
}

// Parameter and FLOP accounting.

template <class Model>
std::size_t count_params(const Model& m) {
  std::size_t n = 0;
  for (const auto* p : m.parameters()) n += p->value.size();
  return n;
}

/// Dense dynamics matrix entries: d^2.
template <class T>
std::size_t dynamics_param_count(const TeacherModel<T>& m) {
  return m.dynamics.W.value.size();
}

/// Diagonal plus low-rank factors: d + 2 d r.
template <class T>
std::size_t dynamics_param_count(const StudentModel<T>& m) {
  return m.dynamics.w_diag.value.size() + m.dynamics.U.value.size() + m.dynamics.V.value.size();
}

/// FLOP constants for one Deterministic forward of a single window.
/// A multiply-add counts 2; LayerNorm 8 per element; tanh 8; ReLU 1;
/// elementwise add, scale or subtract 1; dropout at inference is free.
struct FlopModel {
  static constexpr std::uint64_t kLayerNorm = 8, kTanh = 8, kReLU = 1;

  static std::uint64_t linear(std::size_t in, std::size_t out) { return 2ull * in * out; }

  static std::uint64_t encoder_decoder(std::size_t tau, std::size_t tau_prime, std::size_t d, const Widths& w) {
    std::uint64_t f = 0;
    f += tau;  // window mean
    f += linear(tau, w.e1) + kLayerNorm * w.e1 + kReLU * w.e1;
    f += linear(w.e1, d) + kLayerNorm * d + kTanh * d;
    f += linear(d, w.e2) + kLayerNorm * w.e2 + kReLU * w.e2;
    f += linear(w.e2, w.e3) + kLayerNorm * w.e3 + kReLU * w.e3;
    f += linear(w.e3, tau_prime);
    return f;
  }

  /// W h: 2d^2; + u, beta*, alpha*, subtract: 4d; tanh: 8d.
  static std::uint64_t teacher_rhs(std::size_t d) { return 2ull * d * d + 12ull * d; }

  /// Four rhs evaluations, three stage combinations (2d each), final
  /// five-term combination (8d).
  static std::uint64_t rk4_step(std::size_t d) { return 4 * teacher_rhs(d) + 6ull * d + 8ull * d; }

  /// diag d, V^T h and U t 4dr, 1/r scale and add 2d, + u d, tanh 8d,
  /// alpha/beta/subtract 3d, dt* and add 2d.
  static std::uint64_t euler_step(std::size_t d, std::size_t r) { return 4ull * d * r + 16ull * d; }
};

template <class T>
std::uint64_t count_flops(const TeacherModel<T>& m) {
  return FlopModel::encoder_decoder(m.tau, m.tau_prime, m.hidden, m.widths) +
         m.dynamics.steps * FlopModel::rk4_step(m.hidden);
}

template <class T>
std::uint64_t count_flops(const StudentModel<T>& m) {
  return FlopModel::encoder_decoder(m.tau, m.tau_prime, m.hidden, m.widths) +
         m.dynamics.steps * FlopModel::euler_step(m.hidden, m.dynamics.rank);
}

/// Same architecture and parameters converted to another scalar type.
template <class U, class T>
TeacherModel<U> cast_model(const TeacherModel<T>& m) {
  TeacherModel<U> out;
  out.tau = m.tau;
  out.tau_prime = m.tau_prime;
  out.hidden = m.hidden;
  out.widths = m.widths;
  out.dropout = m.dropout;
  out.dynamics.t_end = m.dynamics.t_end;
  out.dynamics.steps = m.dynamics.steps;
  auto src = m.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = {src[i]->name, src[i]->value.template cast<U>(), src[i]->prunable};
  return out;
}

template <class U, class T>
StudentModel<U> cast_model(const StudentModel<T>& m) {
  StudentModel<U> out;
  out.tau = m.tau;
  out.tau_prime = m.tau_prime;
  out.hidden = m.hidden;
  out.widths = m.widths;
  out.dropout = m.dropout;
  out.dynamics.rank = m.dynamics.rank;
  out.dynamics.dt = m.dynamics.dt;
  out.dynamics.steps = m.dynamics.steps;
  auto src = m.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = {src[i]->name, src[i]->value.template cast<U>(), src[i]->prunable};
  return out;
}

}  // namespace dlnet::models
