#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace vcmix::detail {

// Fixed partition of [0, n) into chunks whose boundaries do not depend on the
// thread count, so reductions combined in chunk order are reproducible.
inline constexpr std::size_t kChunks = 64;

inline std::size_t chunk_begin(std::size_t n, std::size_t c) {
  return n * c / kChunks;
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0)
    return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Calls fn(begin, end) once per chunk and returns the per-chunk results in
// chunk order.
template <typename R, typename Fn>
std::vector<R> chunked_map(std::size_t n, unsigned threads, Fn &&fn) {
  std::vector<R> out(kChunks);
  auto run = [&](std::size_t c) {
    out[c] = fn(chunk_begin(n, c), chunk_begin(n, c + 1));
  };
  const unsigned workers =
      std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(kChunks));
  if (workers <= 1 || n < 2 * kChunks) {
    for (std::size_t c = 0; c < kChunks; ++c)
      run(c);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < kChunks; c = next++)
        run(c);
    });
  pool.clear();
  return out;
}

} // namespace vcmix::detail
