#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace signkit {

// Worker cap: SIGNKIT_THREADS env var if set, else hardware concurrency.
// Thread count never changes results; it only changes wall time.
inline int worker_count() {
  if (const char* env = std::getenv("SIGNKIT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
// result is identical to a sequential loop regardless of scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, int max_workers = -1) {
  if (n == 0) return;
  int workers = max_workers > 0 ? max_workers : worker_count();
  if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = static_cast<std::size_t>(w); i < n;
           i += static_cast<std::size_t>(workers))
        fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace signkit
