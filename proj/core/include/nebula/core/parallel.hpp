#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nebula {

// Calls fn(index, worker) for every index in [0, count). Indices are handed
// out dynamically to whichever worker is idle. Runs inline when workers <= 1.
// The first exception thrown by any worker is rethrown on the calling thread.
template <class Fn>
void parallel_dispatch(std::size_t count, int workers, Fn&& fn) {
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (n <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&](int worker) {
    try {
      for (std::size_t i = next++; i < count; i = next++) fn(i, worker);
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
      next = count;
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(n - 1);
  for (int w = 1; w < n; ++w) pool.emplace_back(body, w);
  body(0);
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace nebula
