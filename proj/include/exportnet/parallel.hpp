#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace exportnet {

namespace detail {
inline std::atomic<unsigned>& thread_limit() {
  static std::atomic<unsigned> limit{0};
  return limit;
}
}  // namespace detail

/// Caps the worker count used by ensemble routines. 0 means hardware concurrency.
inline void set_thread_limit(unsigned threads) { detail::thread_limit() = threads; }

inline unsigned worker_count(std::size_t tasks) {
  unsigned limit = detail::thread_limit();
  if (limit == 0) limit = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(limit, std::max<std::size_t>(tasks, 1)));
}

/// Runs fn(i) for i in [0, count). Work is handed out by index, so any result
/// written to slot i is independent of scheduling. The first exception thrown
/// by a task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned workers = worker_count(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace exportnet
