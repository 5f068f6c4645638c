#include "gridbayes/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#include "gridbayes/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gridbayes {

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

std::size_t resolve_threads(std::optional<long> flag) {
  long n = 1;
  if (flag) {
    n = *flag;
  } else if (const char* env = std::getenv("GRIDBAYES_THREADS"); env && *env) {
    char* end = nullptr;
    n = std::strtol(env, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("GRIDBAYES_THREADS is not an integer: ") + env);
  }
  if (n < 1) throw ConfigError("thread count must be >= 1, got " + std::to_string(n));
  return static_cast<std::size_t>(n);
}

}  // namespace gridbayes
