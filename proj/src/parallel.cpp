#include "tv3s/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "tv3s/errors.hpp"

namespace tv3s {

namespace {
int g_default_threads = 1;
}

int default_threads() { return g_default_threads; }

void set_default_threads(int n) {
  if (n < 1) throw ConfigError("set_default_threads: thread count must be >= 1");
  g_default_threads = n;
}

void parallel_for(int n, const std::function<void(int)>& fn, int threads) {
  if (n <= 0) return;
  if (threads <= 0) threads = g_default_threads;
  threads = std::min(threads, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }

  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  // Contiguous blocks: worker t handles [t*chunk, min(n,(t+1)*chunk)).
  int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int lo = t * chunk;
    int hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tv3s
