#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace carrierscope {

// Thread cap: explicit argument wins, then CARRIER_SCOPE_THREADS, then
// hardware concurrency. Always at least 1.
inline int resolve_thread_count(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CARRIER_SCOPE_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n) across contiguous chunks. Each index computes an
// independent slot, so results do not depend on the thread count.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (int i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace carrierscope
