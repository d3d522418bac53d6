#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace embrenorm {

/// Thread budget handed down from the CLI. Library code never spawns
/// workers beyond this budget and always joins them before returning.
struct Parallelism {
  unsigned threads = 1;

  static Parallelism hardware() {
    return {std::max(1u, std::thread::hardware_concurrency())};
  }

  /// --threads wins, then EMBRENORM_THREADS, then the core count.
  static Parallelism resolve(unsigned requested) {
    if (requested > 0) return {requested};
    if (const char* env = std::getenv("EMBRENORM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) return {static_cast<unsigned>(v)};
    }
    return hardware();
  }
};

/// Runs body(i) for i in [0, n). Each index must write only to its own
/// output slot; the first exception thrown by any worker is rethrown.
template <typename Body>
void parallel_for(std::size_t n, Parallelism par, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, par.threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            next.store(n);
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace embrenorm
