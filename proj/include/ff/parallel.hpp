#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ff {

// Worker-thread cap. Defaults to 4; the FF_THREADS environment variable
// lowers or raises it. Work partitioning elsewhere is independent of this
// value so results do not change with the thread count.
inline int max_threads() {
  static const int cached = [] {
    int n = 4;
    if (const char* env = std::getenv("FF_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) n = v;
    }
    return n;
  }();
  return cached;
}

// Runs fn(i) for i in [0, n). Each index is executed by exactly one thread;
// fn must not touch state shared across indices.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const size_t threads = std::min<size_t>(static_cast<size_t>(max_threads()), n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ff
