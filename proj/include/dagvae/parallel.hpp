#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace dagvae {

// Runs task(i) for i in [0, n) on up to `threads` workers. Tasks write to
// their own slots; callers reduce in index order, so results do not depend on
// the worker count. The lowest-index failure is rethrown.
template <class Task>
void parallel_for(std::size_t n, std::size_t threads, Task&& task) {
  const std::size_t workers = std::min(n, std::max<std::size_t>(1, threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Splits [0, n) into consecutive chunks of at most `chunk` items.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, std::size_t chunk) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += chunk) out.emplace_back(b, std::min(n, b + chunk));
  return out;
}

// Worker count from the request, falling back to DAGVAE_THREADS, then 1.
std::size_t resolve_threads(std::size_t requested);

}  // namespace dagvae
