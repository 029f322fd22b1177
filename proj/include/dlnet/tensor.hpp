#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/error.hpp"

namespace dlnet {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string dims_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Invariant: data().size() == product(dims()).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T{0}) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(dims_product(dims_), fill);
  }

  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != dims_product(dims_))
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match dims " + dims_string(dims_));
  }

  /// 1-D tensor from values.
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const Dims& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent for 2-D views; 1 for a vector.
  std::size_t rows() const { return dims_.size() >= 2 ? dims_[0] : 1; }
  /// Trailing extent.
  std::size_t cols() const { return dims_.empty() ? 0 : dims_.back(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Dims dims) const { return Tensor(std::move(dims), data_); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_dims() const {
    for (std::size_t d : dims_)
      if (d == 0) throw ConfigError("tensor dims must be positive, got " + dims_string(dims_));
  }

  Dims dims_;
  std::vector<T> data_;
};

}  // namespace dlnet
