#pragma once

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmdfm {

/// Global thread budget for the OpenMP kernels. 0 selects the hardware
/// default. Serial mode forces the reference (pragma-free) code path.
int max_threads();
void set_max_threads(int threads);
bool serial_mode();
void set_serial_mode(bool serial);

namespace detail {
inline bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}
}  // namespace detail

/// Runs body(i) for i in [0, n). Iterations must be independent and write to
/// disjoint slots, so the schedule cannot affect results. Nested calls run
/// serially.
template <class F>
void parallel_for(int n, F&& body) {
  if (serial_mode() || detail::in_parallel_region() || n < 2) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
  for (int i = 0; i < n; ++i) body(i);
#else
  for (int i = 0; i < n; ++i) body(i);
#endif
}

/// Deterministic chunked reduction: items are accumulated into fixed-size
/// chunk partials (chunks may run concurrently, each chunk sequential), then
/// partials are combined in chunk order. The summation order is therefore a
/// fixed function of (n, chunk) and the result is bit-identical for any
/// thread count, including the serial reference path.
template <class T, class MakeZero, class Accumulate, class Join>
T chunked_reduce(int n, int chunk, MakeZero make_zero, Accumulate accumulate, Join join) {
  if (chunk < 1) chunk = 1;
  const int n_chunks = n > 0 ? (n + chunk - 1) / chunk : 0;
  std::vector<T> partials;
  partials.reserve(n_chunks);
  for (int c = 0; c < n_chunks; ++c) partials.push_back(make_zero());
  parallel_for(n_chunks, [&](int c) {
    const int lo = c * chunk;
    const int hi = lo + chunk < n ? lo + chunk : n;
    for (int i = lo; i < hi; ++i) accumulate(partials[c], i);
  });
  T total = make_zero();
  for (int c = 0; c < n_chunks; ++c) join(total, partials[c]);
  return total;
}

}  // namespace dmdfm
