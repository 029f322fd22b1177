#pragma once

// Little-endian byte streams for the checkpoint and quantized payload formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlnet/error.hpp"

namespace dlnet::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
  void u16(std::uint16_t v) { put(v); }
  void i16(std::int16_t v) { put(static_cast<std::uint16_t>(v)); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw CheckpointError("string too long to serialize");
    u16(static_cast<std::uint16_t>(s.size()));
    raw(s);
  }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  template <class U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b, std::string what = "buffer") : b_(b), what_(std::move(what)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::int16_t i16() { return static_cast<std::int16_t>(get<std::uint16_t>()); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::span<const std::uint8_t> bytes(std::size_t n) { return take(n); }
  std::string str16() {
    const std::size_t n = u16();
    auto s = take(n);
    return std::string(s.begin(), s.end());
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw CheckpointError(what_ + ": truncated at byte " + std::to_string(pos_));
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U get() {
    auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }

  std::span<const std::uint8_t> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> b) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t c : b) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dlnet::io
