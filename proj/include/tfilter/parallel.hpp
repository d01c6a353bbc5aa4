#ifndef TFILTER_PARALLEL_HPP
#define TFILTER_PARALLEL_HPP

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tfilter {

/// Runs body(i) for i in [0, n) on up to hardware_concurrency threads.
/// The body must write only to slots owned by index i; determinism is the
/// caller's job (derive one RngStream per index, never share one).
template <typename Body>
void parallel_for(std::size_t n, Body&& body, unsigned max_threads = 0) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  unsigned n_threads = max_threads == 0 ? hw : std::min(hw, max_threads);
  if (n_threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n));

  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t]() {
      const std::size_t chunk = (n + n_threads - 1) / n_threads;
      const std::size_t begin = static_cast<std::size_t>(t) * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tfilter

#endif
