#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace sae {

/// Runs fn(i) for i in [0, n) on `workers` threads. Each task must write only
/// into its own output slot and own its random substream; results are then
/// independent of scheduling, which is what makes multi-worker runs
/// byte-identical to serial ones. fn must not throw (catch inside the task).
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int nt = workers < static_cast<int>(n) ? workers : static_cast<int>(n);
  pool.reserve(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
}

}  // namespace sae
