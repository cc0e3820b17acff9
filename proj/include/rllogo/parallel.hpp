#pragma once

#include <omp.h>

#include <algorithm>
#include <cstdlib>

namespace rllogo {

// Thread count used by all parallel regions: hardware threads capped by the
// RLLOGO_THREADS environment variable. Work is always partitioned by index
// with each output element written by exactly one thread, so results are
// bit-identical for any thread count.
inline int effective_threads() {
  static const int n = [] {
    int hw = omp_get_max_threads();
    if (const char* env = std::getenv("RLLOGO_THREADS")) {
      int cap = std::atoi(env);
      if (cap > 0) hw = std::min(hw, cap);
    }
    return std::max(1, hw);
  }();
  return n;
}

struct ParallelInit {
  ParallelInit() { omp_set_num_threads(effective_threads()); }
};

// Applies the cap before any parallel region runs in translation units that
// include this header.
inline const ParallelInit parallel_init{};

}  // namespace rllogo
