#pragma once

// Global magnitude pruning with persistent masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/tape.hpp"
#include "dlnet/tensor.hpp"

namespace dlnet::prune {

/// One entry per model parameter, aligned with Model::parameters(). Entries
/// for non-prunable parameters are empty; prunable ones hold 1 (kept) or 0.
struct PruneMask {
  std::vector<std::vector<std::uint8_t>> keep;
  double sparsity = 0.0;

  std::size_t zeros() const {
    std::size_t z = 0;
    for (const auto& m : keep) z += static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{0}));
    return z;
  }
  std::size_t prunable() const {
    std::size_t n = 0;
    for (const auto& m : keep) n += m.size();
    return n;
  }
  bool empty() const { return keep.empty(); }
  bool operator==(const PruneMask&) const = default;
};

template <class Model>
std::size_t prunable_count(const Model& m) {
  std::size_t n = 0;
  for (const auto* p : m.parameters())
    if (p->prunable) n += p->value.size();
  return n;
}

/// Number of weights removed at sparsity s out of n.
inline std::size_t prune_count(double s, std::size_t n) {
  return static_cast<std::size_t>(std::floor(s * static_cast<double>(n) + 1e-9));
}

template <class Model>
PruneMask full_mask(const Model& m) {
  PruneMask mask;
  for (const auto* p : m.parameters())
    mask.keep.emplace_back(p->prunable ? p->value.size() : 0, std::uint8_t{1});
  return mask;
}

/// Zeroes the floor(s N) smallest-magnitude prunable weights across all
/// prunable tensors. Ties go to the earlier tensor, then the lower index.
template <class Model>
std::pair<Model, PruneMask> magnitude_prune(const Model& src, double s) {
  if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sparsity must be in [0, 1), got " + std::to_string(s));
  Model m = src;
  PruneMask mask = full_mask(m);
  mask.sparsity = s;
  auto params = m.parameters();

  struct Slot {
    double mag;
    std::uint32_t tensor;
    std::uint32_t index;
  };
  std::vector<Slot> slots;
  for (std::uint32_t k = 0; k < params.size(); ++k) {
    if (!params[k]->prunable) continue;
    const auto& v = params[k]->value;
    for (std::uint32_t i = 0; i < v.size(); ++i) slots.push_back({std::fabs(static_cast<double>(v[i])), k, i});
  }
  const std::size_t k_remove = prune_count(s, slots.size());
  if (k_remove == 0) return {std::move(m), std::move(mask)};
  auto less = [](const Slot& a, const Slot& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.tensor != b.tensor) return a.tensor < b.tensor;
    return a.index < b.index;
  };
  std::nth_element(slots.begin(), slots.begin() + static_cast<long>(k_remove - 1), slots.end(), less);
  std::sort(slots.begin(), slots.begin() + static_cast<long>(k_remove), less);
  for (std::size_t j = 0; j < k_remove; ++j) {
    const Slot& sl = slots[j];
    params[sl.tensor]->value[sl.index] = 0;
    mask.keep[sl.tensor][sl.index] = 0;
  }
  return {std::move(m), std::move(mask)};
}

/// Zeroes gradient entries at pruned positions.
template <class T>
void masked_grad_apply(std::vector<Tensor<T>>& grads, const PruneMask& mask) {
  if (mask.empty()) return;
  if (mask.keep.size() != grads.size()) throw ConfigError("mask and gradient lists differ in length");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const auto& keep = mask.keep[k];
    if (keep.empty()) continue;
    if (keep.size() != grads[k].size()) throw ConfigError("mask shape mismatch at tensor " + std::to_string(k));
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (!keep[i]) grads[k][i] = T{0};
  }
}

template <class Model>
std::size_t zero_count(const Model& m) {
  std::size_t z = 0;
  for (const auto* p : m.parameters())
    if (p->prunable)
      for (auto v : p->value.data()) z += v == 0 ? 1 : 0;
  return z;
}

template <class Model>
struct Variant {
  Model model;
  PruneMask mask;
  double sparsity;
};

/// One independent pruned copy per sparsity level.
template <class Model>
std::vector<Variant<Model>> prune_variants(const Model& elite, const std::vector<double>& sparsities) {
  std::vector<Variant<Model>> out;
  out.reserve(sparsities.size());
  for (double s : sparsities) {
    auto [m, mask] = magnitude_prune(elite, s);
    out.push_back({std::move(m), std::move(mask), s});
  }
  return out;
}

inline std::vector<double> default_sparsities() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

}  // namespace dlnet::prune
