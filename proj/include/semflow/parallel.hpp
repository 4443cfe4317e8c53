#ifndef SEMFLOW_PARALLEL_HPP
#define SEMFLOW_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace semflow {

/// Runs fn(k) for k in [0, n) on up to `threads` threads in contiguous
/// chunks. Each index writes only its own output slot, so results do not
/// depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k)
      fn(k);
    return;
  }
  std::exception_ptr failure;
  std::mutex failureLock;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t k = lo; k < hi; ++k)
          fn(k);
      } catch (...) {
        std::lock_guard<std::mutex> g(failureLock);
        if (!failure)
          failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool)
    th.join();
  if (failure)
    std::rethrow_exception(failure);
}

} // namespace semflow

#endif // SEMFLOW_PARALLEL_HPP
