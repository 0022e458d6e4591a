#include "dmdfm/parallel.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmdfm {

namespace {
std::atomic<int> g_max_threads{0};
std::atomic<bool> g_serial{false};
}  // namespace

int max_threads() {
  const int t = g_max_threads.load();
  if (t > 0) return t;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int threads) { g_max_threads.store(threads > 0 ? threads : 0); }

bool serial_mode() { return g_serial.load(); }

void set_serial_mode(bool serial) { g_serial.store(serial); }

}  // namespace dmdfm
