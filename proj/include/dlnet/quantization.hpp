#pragma once

// Post-training int8 quantization of Euler students.
//
// Weights: per-tensor symmetric, scale = max|w| / 127, values in [-127, 127].
// Activations: per-boundary affine from calibrated ranges, scale =
// (max - min) / 255, zero point = round(-128 - min / scale).
// Bias and LayerNorm vectors: per-vector symmetric int16, dequantized to float.
// Rounding is half away from zero everywhere.
//
// quantized_forward() is the reference for the emitted C kernel: every float
// operation below appears in the same order there, and both are compiled
// without FMA contraction, so int8 intermediates match bit for bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/bytes.hpp"
#include "dlnet/compression.hpp"
#include "dlnet/error.hpp"
#include "dlnet/models.hpp"
#include "dlnet/tensor.hpp"

namespace dlnet::quant {

using models::Boundary;
using models::kBoundaryCount;

enum class Scheme : std::uint8_t { SymmetricWeight, AffineActivation };

struct QuantParams {
  float scale = 1.0f;
  int zero_point = 0;
  Scheme scheme = Scheme::AffineActivation;
  bool operator==(const QuantParams&) const = default;
};

inline constexpr float kLayerNormEps = 1e-5f;

/// Affine int8 mapping for the range [lo, hi] widened to include 0. A
/// degenerate range uses scale 1.
inline QuantParams activation_params(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("activation range is not finite");
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  QuantParams p;
  p.scheme = Scheme::AffineActivation;
  float s = static_cast<float>((hi - lo) / 255.0);
  if (!(s > 0.0f) || !std::isfinite(s)) s = 1.0f;
  p.scale = s;
  const double z = std::round(-128.0 - lo / static_cast<double>(s));
  p.zero_point = static_cast<int>(std::clamp(z, -128.0, 127.0));
  return p;
}

inline std::int8_t quantize_act(float v, const QuantParams& p) {
  float r = std::round(v / p.scale) + static_cast<float>(p.zero_point);
  if (!(r >= -128.0f)) r = -128.0f;
  if (r > 127.0f) r = 127.0f;
  return static_cast<std::int8_t>(r);
}

inline float dequantize_act(std::int8_t q, const QuantParams& p) {
  return static_cast<float>(static_cast<std::int32_t>(q) - p.zero_point) * p.scale;
}

struct QWeight {
  std::string name;
  Dims dims;
  std::vector<std::int8_t> q;
  float scale = 1.0f;
  bool operator==(const QWeight&) const = default;
};

struct QVector {
  std::string name;
  std::vector<std::int16_t> q;
  float scale = 1.0f;
  float at(std::size_t i) const { return static_cast<float>(q[i]) * scale; }
  bool operator==(const QVector&) const = default;
};

/// Symmetric per-tensor int8. An all-zero tensor gets scale 1.
inline QWeight quantize_weight(const std::string& name, const Tensor<float>& w) {
  double m = 0.0;
  for (float v : w.data()) m = std::max(m, std::fabs(static_cast<double>(v)));
  float s = static_cast<float>(m / 127.0);
  if (!(s > 0.0f)) s = 1.0f;
  QWeight q{name, w.dims(), std::vector<std::int8_t>(w.size()), s};
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = std::round(static_cast<double>(w[i]) / static_cast<double>(s));
    q.q[i] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return q;
}

inline QVector quantize_vector(const std::string& name, const Tensor<float>& v) {
  double m = 0.0;
  for (float x : v.data()) m = std::max(m, std::fabs(static_cast<double>(x)));
  float s = static_cast<float>(m / 32767.0);
  if (!(s > 0.0f)) s = 1.0f;
  QVector q{name, std::vector<std::int16_t>(v.size()), s};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = std::round(static_cast<double>(v[i]) / static_cast<double>(s));
    q.q[i] = static_cast<std::int16_t>(std::clamp(r, -32767.0, 32767.0));
  }
  return q;
}

enum class OpKind : std::uint8_t { Quantize, Linear, LayerNorm, ReLU, Tanh, Dropout, EulerLowRank, Dequantize, OdeSolve };

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Quantize: return "Quantize";
    case OpKind::Linear: return "Linear";
    case OpKind::LayerNorm: return "LayerNorm";
    case OpKind::ReLU: return "ReLU";
    case OpKind::Tanh: return "Tanh";
    case OpKind::Dropout: return "Dropout";
    case OpKind::EulerLowRank: return "EulerLowRank";
    case OpKind::Dequantize: return "Dequantize";
    case OpKind::OdeSolve: return "OdeSolve";
  }
  return "?";
}

struct GraphOp {
  OpKind kind;
  std::string name;
  bool operator==(const GraphOp&) const = default;
};

enum WeightSlot : int { kFc1, kFc2, kWdiag, kU, kV, kFc3, kFc4, kFc5, kWeightSlots };
enum VectorSlot : int {
  kFc1B, kN1G, kN1B, kFc2B, kN2G, kN2B, kFc3B, kN3G, kN3B, kFc4B, kN4G, kN4B, kFc5B, kVectorSlots
};

inline const std::array<const char*, kWeightSlots>& weight_names() {
  static const std::array<const char*, kWeightSlots> n{"encoder.fc1.weight", "encoder.fc2.weight", "dynamics.w_diag",
                                                       "dynamics.U",         "dynamics.V",         "decoder.fc1.weight",
                                                       "decoder.fc2.weight", "decoder.fc3.weight"};
  return n;
}

inline const std::array<const char*, kVectorSlots>& vector_names() {
  static const std::array<const char*, kVectorSlots> n{
      "encoder.fc1.bias", "encoder.norm1.gain", "encoder.norm1.bias", "encoder.fc2.bias", "encoder.norm2.gain",
      "encoder.norm2.bias", "decoder.fc1.bias", "decoder.norm1.gain", "decoder.norm1.bias", "decoder.fc2.bias",
      "decoder.norm2.gain", "decoder.norm2.bias", "decoder.fc3.bias"};
  return n;
}

struct QuantizedModel {
  std::size_t tau = 0, tau_prime = 0, hidden = 0, rank = 0, e1 = 0, e2 = 0, e3 = 0, steps = 0;
  float alpha = 1, beta = 1, dt = 0, eps = kLayerNormEps;
  std::array<QuantParams, kBoundaryCount> act{};
  std::array<QWeight, kWeightSlots> w;
  std::array<QVector, kVectorSlots> v;
  std::vector<GraphOp> graph;
  bool rle = false;  // weight arrays stored with zero-run encoding

  const QuantParams& boundary(Boundary b) const { return act[static_cast<int>(b)]; }
  bool operator==(const QuantizedModel&) const = default;
};

/// Fraction of zero int8 weights at or above which weight arrays are
/// run-length encoded.
inline constexpr double kRleSparsity = 0.3;

inline std::vector<GraphOp> student_graph() {
  return {{OpKind::Quantize, "input"},           {OpKind::Linear, "encoder.fc1"},   {OpKind::LayerNorm, "encoder.norm1"},
          {OpKind::ReLU, "encoder.relu"},        {OpKind::Dropout, "encoder.drop"}, {OpKind::Quantize, "encoder_hidden"},
          {OpKind::Linear, "encoder.fc2"},       {OpKind::LayerNorm, "encoder.norm2"}, {OpKind::Tanh, "encoder.tanh"},
          {OpKind::EulerLowRank, "dynamics"},    {OpKind::Quantize, "decoder_input"}, {OpKind::Linear, "decoder.fc1"},
          {OpKind::LayerNorm, "decoder.norm1"},  {OpKind::ReLU, "decoder.relu1"},  {OpKind::Dropout, "decoder.drop"},
          {OpKind::Quantize, "decoder_hidden1"}, {OpKind::Linear, "decoder.fc2"},  {OpKind::LayerNorm, "decoder.norm2"},
          {OpKind::ReLU, "decoder.relu2"},       {OpKind::Quantize, "decoder_hidden2"}, {OpKind::Linear, "decoder.fc3"},
          {OpKind::Quantize, "output"},          {OpKind::Dequantize, "output"}};
}

/// Op graph of the teacher; its solver op has no embedded counterpart.
inline std::vector<GraphOp> teacher_graph() {
  auto g = student_graph();
  for (auto& op : g)
    if (op.kind == OpKind::EulerLowRank) op = {OpKind::OdeSolve, "dynamics.rk4"};
  return g;
}

struct Range {
  double lo = 0.0, hi = 0.0;
};
using Ranges = std::array<Range, kBoundaryCount>;

/// Per-boundary (min, max) over a Deterministic pass on the calibration
/// windows. Ranges start at [0, 0], so they always contain 0.
inline Ranges calibrate(const models::StudentModel<float>& m, const Tensor<float>& calib) {
  if (calib.empty() || calib.rows() == 0) throw ConfigError("calibration set is empty");
  Ranges r{};
  models::Observer<float> obs = [&r](Boundary b, const Tensor<float>& t) {
    Range& x = r[static_cast<int>(b)];
    for (float v : t.data()) {
      x.lo = std::min(x.lo, static_cast<double>(v));
      x.hi = std::max(x.hi, static_cast<double>(v));
    }
  };
  Rng unused(0);
  models::predict(m, calib, nn::DropoutMode::Deterministic, unused, &obs);
  return r;
}

inline double int8_weight_sparsity(const QuantizedModel& qm) {
  std::size_t zeros = 0, total = 0;
  for (const auto& w : qm.w) {
    total += w.q.size();
    zeros += static_cast<std::size_t>(std::count(w.q.begin(), w.q.end(), std::int8_t{0}));
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

inline QuantizedModel quantize_int8(const models::StudentModel<float>& m, const prune::PruneMask* mask,
                                    const Ranges& ranges) {
  auto params = m.parameters();
  if (mask && !mask->empty()) {
    if (mask->keep.size() != params.size()) throw ConfigError("mask does not match model parameters");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& keep = mask->keep[k];
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (!keep[i] && params[k]->value[i] != 0.0f)
          throw ConfigError("pruned weight " + params[k]->name + "[" + std::to_string(i) + "] is not zero");
    }
  }
  QuantizedModel qm;
  qm.tau = m.tau;
  qm.tau_prime = m.tau_prime;
  qm.hidden = m.hidden;
  qm.rank = m.dynamics.rank;
  qm.e1 = m.widths.e1;
  qm.e2 = m.widths.e2;
  qm.e3 = m.widths.e3;
  qm.steps = m.dynamics.steps;
  qm.alpha = m.dynamics.alpha.value[0];
  qm.beta = m.dynamics.beta.value[0];
  qm.dt = static_cast<float>(m.dynamics.dt);
  for (int b = 0; b < kBoundaryCount; ++b) qm.act[b] = activation_params(ranges[b].lo, ranges[b].hi);

  const Tensor<float>* wsrc[kWeightSlots] = {&m.encoder.fc1.weight.value, &m.encoder.fc2.weight.value,
                                             &m.dynamics.w_diag.value,    &m.dynamics.U.value,
                                             &m.dynamics.V.value,         &m.decoder.fc1.weight.value,
                                             &m.decoder.fc2.weight.value, &m.decoder.fc3.weight.value};
  for (int k = 0; k < kWeightSlots; ++k) qm.w[k] = quantize_weight(weight_names()[k], *wsrc[k]);

  const Tensor<float>* vsrc[kVectorSlots] = {
      &m.encoder.fc1.bias.value,   &m.encoder.norm1.weight.value, &m.encoder.norm1.bias.value,
      &m.encoder.fc2.bias.value,   &m.encoder.norm2.weight.value, &m.encoder.norm2.bias.value,
      &m.decoder.fc1.bias.value,   &m.decoder.norm1.weight.value, &m.decoder.norm1.bias.value,
      &m.decoder.fc2.bias.value,   &m.decoder.norm2.weight.value, &m.decoder.norm2.bias.value,
      &m.decoder.fc3.bias.value};
  for (int k = 0; k < kVectorSlots; ++k) qm.v[k] = quantize_vector(vector_names()[k], *vsrc[k]);

  qm.graph = student_graph();
  qm.rle = int8_weight_sparsity(qm) >= kRleSparsity;
  return qm;
}

/// Offset and length of each traced int8 tensor, in trace order:
/// input, encoder hidden, (state, low-rank projection) per Euler step,
/// decoder input, decoder hidden 1, decoder hidden 2, output.
inline std::vector<std::pair<std::size_t, std::size_t>> trace_layout(const QuantizedModel& qm) {
  std::vector<std::size_t> lens{qm.tau, qm.e1};
  for (std::size_t s = 0; s < qm.steps; ++s) {
    lens.push_back(qm.hidden);
    lens.push_back(qm.rank);
  }
  for (std::size_t n : {qm.hidden, qm.e2, qm.e3, qm.tau_prime}) lens.push_back(n);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t off = 0;
  for (std::size_t n : lens) {
    out.emplace_back(off, n);
    off += n;
  }
  return out;
}

inline std::size_t trace_length(const QuantizedModel& qm) {
  const auto l = trace_layout(qm);
  return l.back().first + l.back().second;
}

namespace detail {

inline void qlinear(const QWeight& w, const QVector& b, const std::int8_t* q, const QuantParams& in, float* y) {
  const std::size_t m = w.dims[0], n = w.dims[1];
  const float cs = in.scale * w.scale;
  for (std::size_t i = 0; i < m; ++i) {
    std::int32_t acc = 0;
    const std::int8_t* wi = &w.q[i * n];
    for (std::size_t j = 0; j < n; ++j)
      acc += static_cast<std::int32_t>(wi[j]) * (static_cast<std::int32_t>(q[j]) - in.zero_point);
    y[i] = static_cast<float>(acc) * cs + b.at(i);
  }
}

inline void qlayernorm(float* x, std::size_t n, const QVector& g, const QVector& b, float eps) {
  float mean = 0.0f;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (std::size_t j = 0; j < n; ++j) {
    const float d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<float>(n);
  const float inv = 1.0f / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) x[j] = ((x[j] - mean) * inv) * g.at(j) + b.at(j);
}

inline void qrelu(float* x, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) x[j] = x[j] > 0.0f ? x[j] : 0.0f;
}

inline void requant(const float* x, std::size_t n, const QuantParams& p, std::int8_t* q, std::int8_t*& trace) {
  for (std::size_t j = 0; j < n; ++j) q[j] = quantize_act(x[j], p);
  if (trace) {
    std::copy(q, q + n, trace);
    trace += n;
  }
}

}  // namespace detail

/// int8 inference on one window. When `trace` is given it receives every
/// int8 boundary tensor in trace_layout() order.
inline std::vector<float> quantized_forward(const QuantizedModel& qm, std::span<const float> x,
                                            std::vector<std::int8_t>* trace = nullptr) {
  if (x.size() != qm.tau) throw InputError("window length " + std::to_string(x.size()) + " != tau " + std::to_string(qm.tau));
  const std::size_t d = qm.hidden, r = qm.rank;
  std::int8_t* tp = nullptr;
  if (trace) {
    trace->assign(trace_length(qm), 0);
    tp = trace->data();
  }
  const std::size_t wmax = std::max({qm.tau, qm.tau_prime, d, qm.e1, qm.e2, qm.e3});
  std::vector<float> f(wmax), hd(d), h(d), t(r);
  std::vector<std::int8_t> q(wmax), qt(r);

  const QuantParams& p_in = qm.boundary(Boundary::Input);
  detail::requant(x.data(), qm.tau, p_in, q.data(), tp);
  float ubar = 0.0f;
  for (std::size_t j = 0; j < qm.tau; ++j) ubar += dequantize_act(q[j], p_in);
  ubar /= static_cast<float>(qm.tau);

  detail::qlinear(qm.w[kFc1], qm.v[kFc1B], q.data(), p_in, f.data());
  detail::qlayernorm(f.data(), qm.e1, qm.v[kN1G], qm.v[kN1B], qm.eps);
  detail::qrelu(f.data(), qm.e1);
  const QuantParams& p_eh = qm.boundary(Boundary::EncoderHidden);
  detail::requant(f.data(), qm.e1, p_eh, q.data(), tp);
  detail::qlinear(qm.w[kFc2], qm.v[kFc2B], q.data(), p_eh, h.data());
  detail::qlayernorm(h.data(), d, qm.v[kN2G], qm.v[kN2B], qm.eps);
  for (std::size_t i = 0; i < d; ++i) h[i] = std::tanh(h[i]);

  const QuantParams& p_s = qm.boundary(Boundary::State);
  const QuantParams& p_t = qm.boundary(Boundary::LowRankProjection);
  const QWeight &wd = qm.w[kWdiag], &U = qm.w[kU], &V = qm.w[kV];
  const float cs_v = p_s.scale * V.scale;
  const float cs_u = p_t.scale * U.scale;
  const float cs_d = p_s.scale * wd.scale;
  const float inv_r = 1.0f / static_cast<float>(r);
  for (std::size_t s = 0; s < qm.steps; ++s) {
    detail::requant(h.data(), d, p_s, q.data(), tp);
    for (std::size_t i = 0; i < d; ++i) hd[i] = dequantize_act(q[i], p_s);
    for (std::size_t k = 0; k < r; ++k) {
      std::int32_t acc = 0;
      for (std::size_t i = 0; i < d; ++i)
        acc += static_cast<std::int32_t>(V.q[i * r + k]) * (static_cast<std::int32_t>(q[i]) - p_s.zero_point);
      t[k] = static_cast<float>(acc) * cs_v;
    }
    detail::requant(t.data(), r, p_t, qt.data(), tp);
    for (std::size_t i = 0; i < d; ++i) {
      std::int32_t acc = 0;
      for (std::size_t k = 0; k < r; ++k)
        acc += static_cast<std::int32_t>(U.q[i * r + k]) * (static_cast<std::int32_t>(qt[k]) - p_t.zero_point);
      const std::int32_t dq = static_cast<std::int32_t>(wd.q[i]) * (static_cast<std::int32_t>(q[i]) - p_s.zero_point);
      const float diag = static_cast<float>(dq) * cs_d;
      const float pre = (diag + (static_cast<float>(acc) * cs_u) * inv_r) + ubar;
      const float a = std::tanh(pre);
      h[i] = hd[i] + qm.dt * (qm.beta * a - qm.alpha * hd[i]);
    }
  }

  const QuantParams& p_di = qm.boundary(Boundary::DecoderInput);
  detail::requant(h.data(), d, p_di, q.data(), tp);
  detail::qlinear(qm.w[kFc3], qm.v[kFc3B], q.data(), p_di, f.data());
  detail::qlayernorm(f.data(), qm.e2, qm.v[kN3G], qm.v[kN3B], qm.eps);
  detail::qrelu(f.data(), qm.e2);
  const QuantParams& p_h1 = qm.boundary(Boundary::DecoderHidden1);
  detail::requant(f.data(), qm.e2, p_h1, q.data(), tp);
  detail::qlinear(qm.w[kFc4], qm.v[kFc4B], q.data(), p_h1, f.data());
  detail::qlayernorm(f.data(), qm.e3, qm.v[kN4G], qm.v[kN4B], qm.eps);
  detail::qrelu(f.data(), qm.e3);
  const QuantParams& p_h2 = qm.boundary(Boundary::DecoderHidden2);
  detail::requant(f.data(), qm.e3, p_h2, q.data(), tp);
  detail::qlinear(qm.w[kFc5], qm.v[kFc5B], q.data(), p_h2, f.data());
  const QuantParams& p_out = qm.boundary(Boundary::Output);
  detail::requant(f.data(), qm.tau_prime, p_out, q.data(), tp);
  std::vector<float> y(qm.tau_prime);
  for (std::size_t j = 0; j < qm.tau_prime; ++j) y[j] = dequantize_act(q[j], p_out);
  return y;
}

/// Batched convenience over rows of X.
inline Tensor<float> quantized_predict(const QuantizedModel& qm, const Tensor<float>& X) {
  Tensor<float> Y({X.rows(), qm.tau_prime});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto y = quantized_forward(qm, X.row(r));
    std::copy(y.begin(), y.end(), Y.row(r).begin());
  }
  return Y;
}

// Payload: the exact bytes deployed to the device.
//
//   u16 x8   tau, tau', d, r, e1, e2, e3, K
//   f32 x4   alpha, beta, dt, eps
//   8 x      activation: f32 scale, i8 zero point      (boundary order)
//   8 x      weight: f32 scale, u8 encoding, u32 nbytes, data  (slot order)
//   13 x     vector: f32 scale, i16 data               (slot order)
//
// Encoding 0 is dense int8. Encoding 1 replaces each run of 2..255 zeros by
// the pair (-128, run length); -128 never occurs as a weight value.

inline constexpr std::int8_t kRleEscape = -128;

inline std::vector<std::uint8_t> rle_encode(const std::vector<std::int8_t>& q) {
  std::vector<std::uint8_t> out;
  std::size_t i = 0;
  while (i < q.size()) {
    if (q[i] == 0) {
      std::size_t run = 1;
      while (i + run < q.size() && q[i + run] == 0 && run < 255) ++run;
      if (run >= 2) {
        out.push_back(static_cast<std::uint8_t>(kRleEscape));
        out.push_back(static_cast<std::uint8_t>(run));
        i += run;
        continue;
      }
    }
    out.push_back(static_cast<std::uint8_t>(q[i]));
    ++i;
  }
  return out;
}

inline std::vector<std::int8_t> rle_decode(std::span<const std::uint8_t> b, std::size_t count) {
  std::vector<std::int8_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto v = static_cast<std::int8_t>(b[i]);
    if (v == kRleEscape) {
      if (i + 1 >= b.size()) throw CheckpointError("payload: dangling zero-run escape");
      const std::size_t run = b[++i];
      if (run < 1) throw CheckpointError("payload: empty zero run");
      out.insert(out.end(), run, std::int8_t{0});
    } else {
      out.push_back(v);
    }
  }
  if (out.size() != count) throw CheckpointError("payload: weight array decodes to the wrong length");
  return out;
}

struct PayloadLayout {
  std::size_t act = 0;
  std::array<std::size_t, kWeightSlots> w_scale{}, w_data{}, w_bytes{};
  std::array<std::size_t, kVectorSlots> v_scale{}, v_data{};
  std::size_t total = 0;
};

inline std::vector<std::uint8_t> serialize(const QuantizedModel& qm, PayloadLayout* layout = nullptr) {
  io::ByteWriter w;
  PayloadLayout L;
  for (std::size_t v : {qm.tau, qm.tau_prime, qm.hidden, qm.rank, qm.e1, qm.e2, qm.e3, qm.steps}) {
    if (v > 0xFFFF) throw ConfigError("quantized model dimension exceeds 65535");
    w.u16(static_cast<std::uint16_t>(v));
  }
  w.f32(qm.alpha);
  w.f32(qm.beta);
  w.f32(qm.dt);
  w.f32(qm.eps);
  L.act = w.size();
  for (const auto& p : qm.act) {
    w.f32(p.scale);
    w.i8(static_cast<std::int8_t>(p.zero_point));
  }
  for (int k = 0; k < kWeightSlots; ++k) {
    const auto& t = qm.w[k];
    L.w_scale[k] = w.size();
    w.f32(t.scale);
    std::vector<std::uint8_t> data;
    if (qm.rle) {
      data = rle_encode(t.q);
    } else {
      data.resize(t.q.size());
      std::transform(t.q.begin(), t.q.end(), data.begin(), [](std::int8_t v) { return static_cast<std::uint8_t>(v); });
    }
    w.u8(qm.rle ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(data.size()));
    L.w_data[k] = w.size();
    L.w_bytes[k] = data.size();
    w.bytes(data);
  }
  for (int k = 0; k < kVectorSlots; ++k) {
    L.v_scale[k] = w.size();
    w.f32(qm.v[k].scale);
    L.v_data[k] = w.size();
    for (std::int16_t x : qm.v[k].q) w.i16(x);
  }
  L.total = w.size();
  if (layout) *layout = L;
  return w.take();
}

inline QuantizedModel deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "quantized payload");
  QuantizedModel qm;
  qm.tau = r.u16();
  qm.tau_prime = r.u16();
  qm.hidden = r.u16();
  qm.rank = r.u16();
  qm.e1 = r.u16();
  qm.e2 = r.u16();
  qm.e3 = r.u16();
  qm.steps = r.u16();
  if (!qm.tau || !qm.tau_prime || !qm.hidden || !qm.rank || !qm.e1 || !qm.e2 || !qm.e3 || !qm.steps)
    throw CheckpointError("quantized payload: zero dimension");
  qm.alpha = r.f32();
  qm.beta = r.f32();
  qm.dt = r.f32();
  qm.eps = r.f32();
  for (auto& p : qm.act) {
    p.scale = r.f32();
    p.zero_point = r.i8();
    p.scheme = Scheme::AffineActivation;
  }
  const Dims wdims[kWeightSlots] = {{qm.e1, qm.tau},    {qm.hidden, qm.e1}, {qm.hidden},     {qm.hidden, qm.rank},
                                    {qm.hidden, qm.rank}, {qm.e2, qm.hidden}, {qm.e3, qm.e2}, {qm.tau_prime, qm.e3}};
  bool any_rle = false;
  for (int k = 0; k < kWeightSlots; ++k) {
    QWeight t{weight_names()[k], wdims[k], {}, r.f32()};
    const std::uint8_t enc = r.u8();
    const std::uint32_t n = r.u32();
    const auto data = r.bytes(n);
    const std::size_t count = dims_product(wdims[k]);
    if (enc == 1) {
      t.q = rle_decode(data, count);
      any_rle = true;
    } else if (enc == 0) {
      if (n != count) throw CheckpointError("quantized payload: dense weight length mismatch for " + t.name);
      t.q.assign(data.begin(), data.end());
    } else {
      throw CheckpointError("quantized payload: unknown weight encoding " + std::to_string(enc));
    }
    qm.w[k] = std::move(t);
  }
  qm.rle = any_rle;
  const std::size_t vlen[kVectorSlots] = {qm.e1, qm.e1, qm.e1, qm.hidden, qm.hidden, qm.hidden, qm.e2,
                                          qm.e2, qm.e2, qm.e3, qm.e3,     qm.e3,     qm.tau_prime};
  for (int k = 0; k < kVectorSlots; ++k) {
    QVector v{vector_names()[k], std::vector<std::int16_t>(vlen[k]), r.f32()};
    for (auto& x : v.q) x = r.i16();
    qm.v[k] = std::move(v);
  }
  if (r.remaining() != 0) throw CheckpointError("quantized payload: trailing bytes");
  qm.graph = student_graph();
  return qm;
}

inline std::size_t payload_size(const QuantizedModel& qm) { return serialize(qm).size(); }

}  // namespace dlnet::quant
