#pragma once

// Embedded source bundle: dlnet_model.h (payload bytes, dims, offsets),
// dlnet_model.c (static-arena int8 kernel) and golden.csv.
//
// Golden intermediates come from quant::quantized_forward; the C text below
// is a transliteration of that routine and is never used to produce them.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/quantization.hpp"
#include "dlnet/rng.hpp"

namespace dlnet::emit {

struct GoldenVector {
  std::vector<float> input;
  std::vector<std::int8_t> input_q;
  std::vector<std::int8_t> trace;
  std::vector<float> output;
};

struct GoldenVectors {
  std::uint64_t seed = 0;
  std::vector<GoldenVector> vectors;
};

inline constexpr std::size_t kDefaultGoldenCount = 16;

/// Vector 0 is all zeros; the rest are noisy linear-decay windows drawn from
/// Rng(seed).split("golden/<i>").
inline std::vector<float> golden_window(std::size_t tau, std::uint64_t seed, std::size_t i) {
  std::vector<float> x(tau, 0.0f);
  if (i == 0) return x;
  Rng rng = Rng(seed).split("golden/" + std::to_string(i));
  const double start = rng.uniform(0.6, 1.05);
  const double slope = rng.uniform(0.0, 2e-3);
  for (std::size_t j = 0; j < tau; ++j) {
    const double v = start - slope * static_cast<double>(j) + rng.normal(0.0, 0.002);
    x[j] = static_cast<float>(std::clamp(v, 1e-3, 1.2));
  }
  return x;
}

inline GoldenVectors make_golden(const quant::QuantizedModel& qm, std::uint64_t seed,
                                 std::size_t count = kDefaultGoldenCount) {
  if (count == 0) throw ConfigError("golden vector count must be positive");
  GoldenVectors gv{seed, {}};
  for (std::size_t i = 0; i < count; ++i) {
    GoldenVector g;
    g.input = golden_window(qm.tau, seed, i);
    g.output = quant::quantized_forward(qm, g.input, &g.trace);
    g.input_q.assign(g.trace.begin(), g.trace.begin() + static_cast<long>(qm.tau));
    gv.vectors.push_back(std::move(g));
  }
  return gv;
}

namespace detail {

inline std::string fmt_g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <class A>
std::string u32_list(const A& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(a[i]) + "u";
  }
  return s;
}

inline std::size_t arena_wmax(const quant::QuantizedModel& qm) {
  return std::max({qm.tau, qm.tau_prime, qm.hidden, qm.e1, qm.e2, qm.e3});
}

}  // namespace detail

/// Bytes of the kernel's static arena struct on a target with 4-byte float
/// and int32 alignment.
inline std::size_t arena_bytes(const quant::QuantizedModel& qm) {
  const std::size_t w = detail::arena_wmax(qm), d = qm.hidden, r = qm.rank;
  const std::size_t words = 4 * (w + 2 * d + 2 * r);
  const std::size_t bytes = w + r;
  return words + (bytes + 3) / 4 * 4;
}

/// One row per element: input floats, each traced int8 tensor as
/// intermediate:k, output floats.
inline std::string golden_csv(const quant::QuantizedModel& qm, const GoldenVectors& gv) {
  const auto layout = quant::trace_layout(qm);
  std::string s = "vector_id,kind,index,value\n";
  for (std::size_t v = 0; v < gv.vectors.size(); ++v) {
    const auto& g = gv.vectors[v];
    if (g.trace.size() != quant::trace_length(qm)) throw EmissionError("golden trace length does not match the model");
    const std::string id = std::to_string(v);
    for (std::size_t j = 0; j < g.input.size(); ++j)
      s += id + ",input," + std::to_string(j) + "," + detail::fmt_g9(g.input[j]) + "\n";
    for (std::size_t k = 0; k < layout.size(); ++k) {
      const std::string kind = id + ",intermediate:" + std::to_string(k) + ",";
      for (std::size_t j = 0; j < layout[k].second; ++j)
        s += kind + std::to_string(j) + "," + std::to_string(static_cast<int>(g.trace[layout[k].first + j])) + "\n";
    }
    for (std::size_t j = 0; j < g.output.size(); ++j)
      s += id + ",output," + std::to_string(j) + "," + detail::fmt_g9(g.output[j]) + "\n";
  }
  return s;
}

struct Bundle {
  std::string header;
  std::string source;
  std::string golden;
  std::size_t payload_bytes = 0;
  std::size_t arena_bytes = 0;
  bool operator==(const Bundle&) const = default;
};

/// Rejects graphs containing ops the kernel does not implement.
inline void check_supported(const quant::QuantizedModel& qm) {
  using quant::OpKind;
  for (std::size_t i = 0; i < qm.graph.size(); ++i) {
    const auto k = qm.graph[i].kind;
    const bool ok = k == OpKind::Quantize || k == OpKind::Linear || k == OpKind::LayerNorm || k == OpKind::ReLU ||
                    k == OpKind::Tanh || k == OpKind::Dropout || k == OpKind::EulerLowRank ||
                    k == OpKind::Dequantize;
    if (!ok)
      throw EmissionError(std::string("unsupported op ") + quant::op_name(k) + " ('" + qm.graph[i].name +
                          "') at graph position " + std::to_string(i));
  }
  if (qm.graph != quant::student_graph()) throw EmissionError("graph layout differs from the supported student graph");
}

inline Bundle emit_embedded_source(const quant::QuantizedModel& qm, const GoldenVectors& gv) {
  check_supported(qm);
  quant::PayloadLayout L;
  const auto payload = quant::serialize(qm, &L);
  Bundle b;
  b.payload_bytes = payload.size();
  b.arena_bytes = arena_bytes(qm);

  std::string& h = b.header;
  h += "#ifndef DLNET_MODEL_H\n#define DLNET_MODEL_H\n\n#include <stdint.h>\n\n";
  auto def = [&h](const char* name, std::size_t v) { h += "#define " + std::string(name) + " " + std::to_string(v) + "\n"; };
  def("DLNET_TAU", qm.tau);
  def("DLNET_TAU_PRIME", qm.tau_prime);
  def("DLNET_HIDDEN", qm.hidden);
  def("DLNET_RANK", qm.rank);
  def("DLNET_E1", qm.e1);
  def("DLNET_E2", qm.e2);
  def("DLNET_E3", qm.e3);
  def("DLNET_STEPS", qm.steps);
  def("DLNET_WMAX", detail::arena_wmax(qm));
  def("DLNET_RLE", qm.rle ? 1 : 0);
  def("DLNET_PAYLOAD_BYTES", payload.size());
  def("DLNET_TRACE_LEN", quant::trace_length(qm));
  def("DLNET_ARENA_BYTES", b.arena_bytes);
  def("DLNET_ACT_OFF", L.act);
  h += "\nstatic const uint32_t dlnet_w_scale_off[8] = {" + detail::u32_list(L.w_scale) + "};\n";
  h += "static const uint32_t dlnet_w_data_off[8] = {" + detail::u32_list(L.w_data) + "};\n";
  h += "static const uint32_t dlnet_v_scale_off[13] = {" + detail::u32_list(L.v_scale) + "};\n";
  h += "static const uint32_t dlnet_v_data_off[13] = {" + detail::u32_list(L.v_data) + "};\n\n";
  h += "static const unsigned char dlnet_payload[DLNET_PAYLOAD_BYTES] = {\n";
  for (std::size_t i = 0; i < payload.size(); ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02x,", payload[i]);
    h += (i % 16 == 0) ? "  " : " ";
    h += buf;
    if (i % 16 == 15 || i + 1 == payload.size()) h += "\n";
  }
  h += "};\n\n";
  h += "/* x: DLNET_TAU floats, y: DLNET_TAU_PRIME floats, trace: DLNET_TRACE_LEN bytes or NULL. */\n";
  h += "void dlnet_forecast(const float* x, float* y, int8_t* trace);\n\n#endif\n";

  b.source = R"C(/* int8 forecaster. Little-endian target, no FMA contraction, no heap. */
#include <math.h>
#include <stdint.h>
#include <string.h>

#include "dlnet_model.h"

enum { W_FC1, W_FC2, W_WDIAG, W_U, W_V, W_FC3, W_FC4, W_FC5 };
enum { V_FC1B, V_N1G, V_N1B, V_FC2B, V_N2G, V_N2B, V_FC3B, V_N3G, V_N3B, V_FC4B, V_N4G, V_N4B, V_FC5B };
enum { A_INPUT, A_ENC_HIDDEN, A_STATE, A_LOWRANK, A_DEC_INPUT, A_DEC_H1, A_DEC_H2, A_OUTPUT };

static struct {
  float f[DLNET_WMAX];
  float h[DLNET_HIDDEN];
  float hd[DLNET_HIDDEN];
  float t[DLNET_RANK];
  int32_t acc[DLNET_RANK];
  int8_t q[DLNET_WMAX];
  int8_t qt[DLNET_RANK];
} arena;

typedef char dlnet_arena_size_check[(sizeof(arena) == DLNET_ARENA_BYTES) ? 1 : -1];

static float rd_f32(uint32_t off) {
  float v;
  memcpy(&v, dlnet_payload + off, sizeof v);
  return v;
}

static int16_t rd_i16(uint32_t off) {
  int16_t v;
  memcpy(&v, dlnet_payload + off, sizeof v);
  return v;
}

static float act_scale(int b) { return rd_f32(DLNET_ACT_OFF + 5u * (uint32_t)b); }
static int32_t act_zp(int b) { return (int32_t)(int8_t)dlnet_payload[DLNET_ACT_OFF + 5u * (uint32_t)b + 4u]; }
static float vec_at(int v, int i) {
  return (float)rd_i16(dlnet_v_data_off[v] + 2u * (uint32_t)i) * rd_f32(dlnet_v_scale_off[v]);
}

typedef struct {
  const unsigned char* p;
  unsigned run;
} wstream;

static wstream ws_open(int w) {
  wstream s;
  s.p = dlnet_payload + dlnet_w_data_off[w];
  s.run = 0;
  return s;
}

static int32_t ws_next(wstream* s) {
#if DLNET_RLE
  int8_t v;
  if (s->run) {
    s->run--;
    return 0;
  }
  v = (int8_t)*s->p++;
  if (v == -128) {
    s->run = (unsigned)*s->p++ - 1u;
    return 0;
  }
  return v;
#else
  return (int8_t)*s->p++;
#endif
}

static int8_t q8(float v, float s, int32_t zp) {
  float r = roundf(v / s) + (float)zp;
  if (!(r >= -128.0f)) r = -128.0f;
  if (r > 127.0f) r = 127.0f;
  return (int8_t)r;
}

static float dq8(int8_t q, float s, int32_t zp) { return (float)((int32_t)q - zp) * s; }

static int8_t* requant(const float* x, int n, int b, int8_t* q, int8_t* trace) {
  const float s = act_scale(b);
  const int32_t zp = act_zp(b);
  int j;
  for (j = 0; j < n; ++j) q[j] = q8(x[j], s, zp);
  if (trace) {
    memcpy(trace, q, (size_t)n);
    trace += n;
  }
  return trace;
}

static void qlinear(int w, int bias, const int8_t* q, int n, int m, int b_in, float* y) {
  wstream ws = ws_open(w);
  const float cs = act_scale(b_in) * rd_f32(dlnet_w_scale_off[w]);
  const int32_t zp = act_zp(b_in);
  int i, j;
  for (i = 0; i < m; ++i) {
    int32_t acc = 0;
    for (j = 0; j < n; ++j) acc += ws_next(&ws) * ((int32_t)q[j] - zp);
    y[i] = (float)acc * cs + vec_at(bias, i);
  }
}

static void layernorm(float* x, int n, int g, int b) {
  const float eps = rd_f32(28u);
  float mean = 0.0f, var = 0.0f, inv;
  int j;
  for (j = 0; j < n; ++j) mean += x[j];
  mean /= (float)n;
  for (j = 0; j < n; ++j) {
    const float d = x[j] - mean;
    var += d * d;
  }
  var /= (float)n;
  inv = 1.0f / sqrtf(var + eps);
  for (j = 0; j < n; ++j) x[j] = ((x[j] - mean) * inv) * vec_at(g, j) + vec_at(b, j);
}

static void relu(float* x, int n) {
  int j;
  for (j = 0; j < n; ++j) x[j] = x[j] > 0.0f ? x[j] : 0.0f;
}

void dlnet_forecast(const float* x, float* y, int8_t* trace) {
  const float alpha = rd_f32(16u), beta = rd_f32(20u), dt = rd_f32(24u);
  float* f = arena.f;
  float* h = arena.h;
  float* hd = arena.hd;
  int8_t* q = arena.q;
  float s_in, s_s, s_t, cs_v, cs_u, cs_d, inv_r, ubar = 0.0f;
  int32_t z_in, z_s, z_t;
  int i, j, k, s;

  trace = requant(x, DLNET_TAU, A_INPUT, q, trace);
  s_in = act_scale(A_INPUT);
  z_in = act_zp(A_INPUT);
  for (j = 0; j < DLNET_TAU; ++j) ubar += dq8(q[j], s_in, z_in);
  ubar /= (float)DLNET_TAU;

  qlinear(W_FC1, V_FC1B, q, DLNET_TAU, DLNET_E1, A_INPUT, f);
  layernorm(f, DLNET_E1, V_N1G, V_N1B);
  relu(f, DLNET_E1);
  trace = requant(f, DLNET_E1, A_ENC_HIDDEN, q, trace);
  qlinear(W_FC2, V_FC2B, q, DLNET_E1, DLNET_HIDDEN, A_ENC_HIDDEN, h);
  layernorm(h, DLNET_HIDDEN, V_N2G, V_N2B);
  for (i = 0; i < DLNET_HIDDEN; ++i) h[i] = tanhf(h[i]);

  s_s = act_scale(A_STATE);
  z_s = act_zp(A_STATE);
  s_t = act_scale(A_LOWRANK);
  z_t = act_zp(A_LOWRANK);
  cs_v = s_s * rd_f32(dlnet_w_scale_off[W_V]);
  cs_u = s_t * rd_f32(dlnet_w_scale_off[W_U]);
  cs_d = s_s * rd_f32(dlnet_w_scale_off[W_WDIAG]);
  inv_r = 1.0f / (float)DLNET_RANK;
  for (s = 0; s < DLNET_STEPS; ++s) {
    wstream wv, wu, wd;
    trace = requant(h, DLNET_HIDDEN, A_STATE, q, trace);
    for (i = 0; i < DLNET_HIDDEN; ++i) hd[i] = dq8(q[i], s_s, z_s);
    for (k = 0; k < DLNET_RANK; ++k) arena.acc[k] = 0;
    wv = ws_open(W_V);
    for (i = 0; i < DLNET_HIDDEN; ++i)
      for (k = 0; k < DLNET_RANK; ++k) arena.acc[k] += ws_next(&wv) * ((int32_t)q[i] - z_s);
    for (k = 0; k < DLNET_RANK; ++k) arena.t[k] = (float)arena.acc[k] * cs_v;
    trace = requant(arena.t, DLNET_RANK, A_LOWRANK, arena.qt, trace);
    wu = ws_open(W_U);
    wd = ws_open(W_WDIAG);
    for (i = 0; i < DLNET_HIDDEN; ++i) {
      int32_t acc = 0, dq;
      float diag, pre, a;
      for (k = 0; k < DLNET_RANK; ++k) acc += ws_next(&wu) * ((int32_t)arena.qt[k] - z_t);
      dq = ws_next(&wd) * ((int32_t)q[i] - z_s);
      diag = (float)dq * cs_d;
      pre = (diag + ((float)acc * cs_u) * inv_r) + ubar;
      a = tanhf(pre);
      h[i] = hd[i] + dt * (beta * a - alpha * hd[i]);
    }
  }

  trace = requant(h, DLNET_HIDDEN, A_DEC_INPUT, q, trace);
  qlinear(W_FC3, V_FC3B, q, DLNET_HIDDEN, DLNET_E2, A_DEC_INPUT, f);
  layernorm(f, DLNET_E2, V_N3G, V_N3B);
  relu(f, DLNET_E2);
  trace = requant(f, DLNET_E2, A_DEC_H1, q, trace);
  qlinear(W_FC4, V_FC4B, q, DLNET_E2, DLNET_E3, A_DEC_H1, f);
  layernorm(f, DLNET_E3, V_N4G, V_N4B);
  relu(f, DLNET_E3);
  trace = requant(f, DLNET_E3, A_DEC_H2, q, trace);
  qlinear(W_FC5, V_FC5B, q, DLNET_E3, DLNET_TAU_PRIME, A_DEC_H2, f);
  trace = requant(f, DLNET_TAU_PRIME, A_OUTPUT, q, trace);
  (void)trace;
  for (j = 0; j < DLNET_TAU_PRIME; ++j) y[j] = dq8(q[j], act_scale(A_OUTPUT), act_zp(A_OUTPUT));
}
)C";

  b.golden = golden_csv(qm, gv);
  return b;
}

inline constexpr const char* kHeaderFile = "dlnet_model.h";
inline constexpr const char* kSourceFile = "dlnet_model.c";
inline constexpr const char* kGoldenFile = "golden.csv";

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot write " + p.string());
  f << text;
  if (!f) throw InputError("failed writing " + p.string());
}

inline void write_bundle(const std::filesystem::path& dir, const Bundle& b) {
  std::filesystem::create_directories(dir);
  write_text(dir / kHeaderFile, b.header);
  write_text(dir / kSourceFile, b.source);
  write_text(dir / kGoldenFile, b.golden);
}

}  // namespace dlnet::emit
