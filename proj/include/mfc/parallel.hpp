#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfc {

/// Base class for every error raised by the solver.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid configuration or problem setup detected before a run.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Number of worker threads: MFCONTROL_THREADS if set, else hardware concurrency.
std::size_t worker_count();

/// Overrides the worker count for the current process (0 restores the default).
void set_worker_count(std::size_t n);

/// Work is split into fixed chunks of this many indices, independent of the
/// number of workers, so chunked reductions are schedule-independent.
inline constexpr std::size_t kChunk = 512;

/// Calls body(begin, end) for each fixed chunk of [0, n), distributing chunks
/// over the workers. The first exception thrown by any chunk is rethrown.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

template <typename F>
void parallel_for(std::size_t n, F&& f) {
  parallel_chunks(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) f(i);
  });
}

/// Deterministic sum of term(i) over [0, n): per-chunk partial sums added in
/// chunk order.
template <typename F>
double chunked_sum(std::size_t n, F&& term) {
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
  parallel_chunks(n, [&](std::size_t b, std::size_t e) {
    double s = 0.0;
    for (std::size_t i = b; i < e; ++i) s += term(i);
    partial[b / kChunk] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace mfc
