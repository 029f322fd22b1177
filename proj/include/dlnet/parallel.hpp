#pragma once

// Bounded worker pool over an index range. Results come back in index order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace dlnet {

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls fn(i) for i in [0, n) on at most `workers` threads. If any call
/// throws, the exception with the lowest index is rethrown after all workers
/// finish.
template <class Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn) -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
  using R = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::min(std::max<std::size_t>(workers, 1), n);
  if (k <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(k);
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace dlnet
