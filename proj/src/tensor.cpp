#include "vlo/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace vlo {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

int num_threads() { return g_threads.load(); }

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int workers =
      static_cast<int>(std::min(static_cast<size_t>(g_threads.load()), n));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const size_t chunk = (n + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    const size_t lo = t * chunk;
    const size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace vlo
