#pragma once

// DLNT checkpoint container.
//
//   "DLNT" | u32 version | u8 kind
//   u32 n  | n x (str16 name, f64 value)                       scalars
//   u32 n  | n x (str16 name, u8 dtype, u8 rank, u32 dims[rank], payload)
//   u32 n  | n x (str16 name, u32 nbits, ceil(nbits/8) bytes)  masks, LSB first
//   u64 FNV-1a of every preceding byte
//
// All integers little-endian; str16 is a u16 length followed by bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/bytes.hpp"
#include "dlnet/compression.hpp"
#include "dlnet/error.hpp"
#include "dlnet/models.hpp"
#include "dlnet/quantization.hpp"
#include "dlnet/rng.hpp"

namespace dlnet::ckpt {

inline constexpr std::uint32_t kVersion = 1;

enum class Kind : std::uint8_t { Teacher = 0, Student = 1, Quantized = 2 };
enum class DType : std::uint8_t { F32 = 0, I8 = 1, U8 = 2, I16 = 3, F64 = 4 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::I8: return 1;
    case DType::U8: return 1;
    case DType::I16: return 2;
    case DType::F64: return 8;
  }
  throw CheckpointError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  Dims dims;
  std::vector<std::uint8_t> raw;  // little-endian element bytes
  bool operator==(const NamedTensor&) const = default;
};

struct Container {
  Kind kind = Kind::Teacher;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<NamedTensor> tensors;
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> masks;  // one byte per flag in memory
  bool operator==(const Container&) const = default;

  double scalar(const std::string& name) const {
    for (const auto& [n, v] : scalars)
      if (n == name) return v;
    throw CheckpointError("checkpoint is missing scalar '" + name + "'");
  }
  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw CheckpointError("checkpoint is missing tensor '" + name + "'");
  }
  const std::vector<std::uint8_t>* mask(const std::string& name) const {
    for (const auto& [n, m] : masks)
      if (n == name) return &m;
    return nullptr;
  }
};

inline std::vector<std::uint8_t> encode(const Container& c) {
  io::ByteWriter w;
  w.raw("DLNT");
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.u32(static_cast<std::uint32_t>(c.scalars.size()));
  for (const auto& [n, v] : c.scalars) {
    w.str16(n);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.raw.size() != dims_product(t.dims) * dtype_size(t.dtype))
      throw CheckpointError("tensor '" + t.name + "' payload does not match its dims");
    if (t.dims.size() > 255) throw CheckpointError("tensor '" + t.name + "' has too many dims");
    w.str16(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (std::size_t d : t.dims) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(t.raw);
  }
  w.u32(static_cast<std::uint32_t>(c.masks.size()));
  for (const auto& [n, m] : c.masks) {
    w.str16(n);
    w.u32(static_cast<std::uint32_t>(m.size()));
    std::vector<std::uint8_t> packed((m.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.bytes(packed);
  }
  w.u64(io::fnv1a64(w.data()));
  return w.take();
}

inline Container decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 + 4 + 1) throw CheckpointError("checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 8);
  io::ByteReader tail(bytes.last(8), "checkpoint checksum");
  if (tail.u64() != io::fnv1a64(body)) throw CheckpointError("checkpoint checksum mismatch");
  io::ByteReader r(body, "checkpoint");
  const auto magic = r.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "DLNT") throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Container c;
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw CheckpointError("unknown model kind " + std::to_string(kind));
  c.kind = static_cast<Kind>(kind);
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.str16();
    c.scalars.emplace_back(std::move(name), r.f64());
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str16();
    const std::uint8_t tag = r.u8();
    if (tag > 4) throw CheckpointError("tensor '" + t.name + "' has unknown dtype " + std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const std::uint8_t rank = r.u8();
    for (std::uint8_t k = 0; k < rank; ++k) t.dims.push_back(r.u32());
    const auto raw = r.bytes(dims_product(t.dims) * dtype_size(t.dtype));
    t.raw.assign(raw.begin(), raw.end());
    c.tensors.push_back(std::move(t));
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.str16();
    const std::uint32_t nbits = r.u32();
    const auto packed = r.bytes((nbits + 7) / 8);
    std::vector<std::uint8_t> m(nbits);
    for (std::uint32_t b = 0; b < nbits; ++b) m[b] = (packed[b / 8] >> (b % 8)) & 1u;
    c.masks.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

inline NamedTensor f32_tensor(const std::string& name, const Tensor<float>& v) {
  io::ByteWriter w;
  for (float x : v.data()) w.f32(x);
  return {name, DType::F32, v.dims(), w.take()};
}

inline Tensor<float> to_f32(const NamedTensor& t) {
  if (t.dtype != DType::F32) throw CheckpointError("tensor '" + t.name + "' is not f32");
  Tensor<float> v(t.dims);
  io::ByteReader r(t.raw, t.name);
  for (float& x : v.storage()) x = r.f32();
  return v;
}

namespace detail {

template <class Model>
void put_params(Container& c, const Model& m) {
  for (const auto* p : m.parameters()) c.tensors.push_back(f32_tensor(p->name, p->value));
}

template <class Model>
void get_params(const Container& c, Model& m) {
  if (c.tensors.size() != m.parameters().size())
    throw CheckpointError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, model expects " +
                          std::to_string(m.parameters().size()));
  for (auto* p : m.parameters()) {
    Tensor<float> v = to_f32(c.tensor(p->name));
    if (v.dims() != p->value.dims()) throw CheckpointError("tensor '" + p->name + "' has the wrong shape");
    p->value = std::move(v);
  }
}

inline std::size_t as_size(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) throw CheckpointError(std::string("bad scalar ") + what);
  return static_cast<std::size_t>(v);
}

inline void put_common(Container& c, std::size_t tau, std::size_t tau_prime, std::size_t hidden,
                       const models::Widths& w, double dropout) {
  c.scalars = {{"tau", static_cast<double>(tau)},     {"tau_prime", static_cast<double>(tau_prime)},
               {"hidden", static_cast<double>(hidden)}, {"e1", static_cast<double>(w.e1)},
               {"e2", static_cast<double>(w.e2)},       {"e3", static_cast<double>(w.e3)},
               {"dropout", dropout}};
}

inline models::Widths get_widths(const Container& c) {
  return {as_size(c.scalar("e1"), "e1"), as_size(c.scalar("e2"), "e2"), as_size(c.scalar("e3"), "e3")};
}

}  // namespace detail

inline Container teacher_container(const models::TeacherModel<float>& m) {
  Container c;
  c.kind = Kind::Teacher;
  detail::put_common(c, m.tau, m.tau_prime, m.hidden, m.widths, m.dropout);
  c.scalars.emplace_back("t_end", m.dynamics.t_end);
  c.scalars.emplace_back("steps", static_cast<double>(m.dynamics.steps));
  detail::put_params(c, m);
  return c;
}

inline models::TeacherModel<float> teacher_from(const Container& c) {
  if (c.kind != Kind::Teacher) throw CheckpointError("checkpoint does not hold a teacher");
  models::TeacherConfig cfg;
  cfg.tau = detail::as_size(c.scalar("tau"), "tau");
  cfg.tau_prime = detail::as_size(c.scalar("tau_prime"), "tau_prime");
  cfg.hidden = detail::as_size(c.scalar("hidden"), "hidden");
  cfg.widths = detail::get_widths(c);
  cfg.dropout = c.scalar("dropout");
  cfg.t_end = c.scalar("t_end");
  cfg.ode_steps = detail::as_size(c.scalar("steps"), "steps");
  Rng rng(0);
  auto m = models::make_teacher<float>(cfg, rng);
  detail::get_params(c, m);
  return m;
}

/// Pruning masks, when present, are stored under the parameter names.
inline Container student_container(const models::StudentModel<float>& m, const prune::PruneMask* mask = nullptr) {
  Container c;
  c.kind = Kind::Student;
  detail::put_common(c, m.tau, m.tau_prime, m.hidden, m.widths, m.dropout);
  c.scalars.emplace_back("rank", static_cast<double>(m.dynamics.rank));
  c.scalars.emplace_back("t_end", m.dynamics.dt * static_cast<double>(m.dynamics.steps));
  c.scalars.emplace_back("dt", m.dynamics.dt);
  c.scalars.emplace_back("steps", static_cast<double>(m.dynamics.steps));
  detail::put_params(c, m);
  if (mask && !mask->empty()) {
    c.scalars.emplace_back("sparsity", mask->sparsity);
    const auto ps = m.parameters();
    if (mask->keep.size() != ps.size()) throw CheckpointError("mask does not match model parameters");
    for (std::size_t k = 0; k < ps.size(); ++k)
      if (!mask->keep[k].empty()) c.masks.emplace_back(ps[k]->name, mask->keep[k]);
  }
  return c;
}

struct LoadedStudent {
  models::StudentModel<float> model;
  std::optional<prune::PruneMask> mask;
};

inline LoadedStudent student_from(const Container& c) {
  if (c.kind != Kind::Student) throw CheckpointError("checkpoint does not hold a student");
  models::StudentConfig cfg;
  cfg.tau = detail::as_size(c.scalar("tau"), "tau");
  cfg.tau_prime = detail::as_size(c.scalar("tau_prime"), "tau_prime");
  cfg.hidden = detail::as_size(c.scalar("hidden"), "hidden");
  cfg.widths = detail::get_widths(c);
  cfg.dropout = c.scalar("dropout");
  cfg.rank = detail::as_size(c.scalar("rank"), "rank");
  cfg.t_end = c.scalar("t_end");
  cfg.euler_steps = detail::as_size(c.scalar("steps"), "steps");
  Rng rng(0);
  LoadedStudent out{models::make_student<float>(cfg, rng), std::nullopt};
  if (out.model.dynamics.rank != cfg.rank) throw CheckpointError("stored rank is not valid for the hidden width");
  out.model.dynamics.dt = c.scalar("dt");
  detail::get_params(c, out.model);
  if (!c.masks.empty()) {
    prune::PruneMask mask = prune::full_mask(out.model);
    mask.sparsity = c.scalar("sparsity");
    const auto ps = out.model.parameters();
    std::size_t used = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const auto* m = c.mask(ps[k]->name);
      if (!m) continue;
      if (!ps[k]->prunable || m->size() != ps[k]->value.size())
        throw CheckpointError("mask '" + ps[k]->name + "' does not fit its tensor");
      mask.keep[k] = *m;
      ++used;
    }
    if (used != c.masks.size()) throw CheckpointError("checkpoint has masks for unknown tensors");
    out.mask = std::move(mask);
  }
  return out;
}

/// The deployed payload is stored verbatim as a u8 tensor.
inline Container quantized_container(const quant::QuantizedModel& qm) {
  Container c;
  c.kind = Kind::Quantized;
  c.scalars = {{"tau", static_cast<double>(qm.tau)},       {"tau_prime", static_cast<double>(qm.tau_prime)},
               {"hidden", static_cast<double>(qm.hidden)}, {"rank", static_cast<double>(qm.rank)},
               {"steps", static_cast<double>(qm.steps)}};
  auto payload = quant::serialize(qm);
  c.tensors.push_back({"payload", DType::U8, {payload.size()}, std::move(payload)});
  return c;
}

inline quant::QuantizedModel quantized_from(const Container& c) {
  if (c.kind != Kind::Quantized) throw CheckpointError("checkpoint does not hold a quantized model");
  const auto& t = c.tensor("payload");
  if (t.dtype != DType::U8) throw CheckpointError("quantized payload must be u8");
  return quant::deserialize(t.raw);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot write " + p.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing " + p.string());
}

inline std::vector<std::uint8_t> save(const models::TeacherModel<float>& m) { return encode(teacher_container(m)); }
inline std::vector<std::uint8_t> save(const models::StudentModel<float>& m, const prune::PruneMask* mask = nullptr) {
  return encode(student_container(m, mask));
}
inline std::vector<std::uint8_t> save(const quant::QuantizedModel& qm) { return encode(quantized_container(qm)); }

inline models::TeacherModel<float> load_teacher(std::span<const std::uint8_t> b) { return teacher_from(decode(b)); }
inline LoadedStudent load_student(std::span<const std::uint8_t> b) { return student_from(decode(b)); }
inline quant::QuantizedModel load_quantized(std::span<const std::uint8_t> b) { return quantized_from(decode(b)); }

}  // namespace dlnet::ckpt
