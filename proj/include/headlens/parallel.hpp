#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace headlens {

inline int worker_count() {
  if (const char* env = std::getenv("HEADLENS_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n). Tasks must write only to slot-indexed outputs;
// callers reduce in index order afterwards, so results never depend on the
// worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0) {
  if (workers <= 0) workers = worker_count();
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::size_t spawn = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  pool.reserve(spawn);
  for (std::size_t w = 0; w < spawn; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace headlens
