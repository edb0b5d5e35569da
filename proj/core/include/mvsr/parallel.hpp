#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace mvsr {

/// Runs fn(begin, end) over disjoint chunks of [0, n). With threads <= 1 the
/// whole range runs inline. Chunking is deterministic, so any computation
/// whose chunks write disjoint outputs produces identical results at every
/// thread count.
inline void parallel_for(int n, int threads,
                         const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mvsr
