#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace asiplab {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Work is split
/// into contiguous index ranges; callers write results into slot i and reduce
/// in index order afterwards, so output never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn &&fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = count * t / threads;
    const std::size_t hi = count * (t + 1) / threads;
    pool.emplace_back([&, lo, hi, t] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto &th : pool) th.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

/// Replicas are reduced in fixed-size chunks so that floating-point sums are
/// identical for any thread count.
inline constexpr std::size_t kReductionChunk = 1024;

} // namespace asiplab
