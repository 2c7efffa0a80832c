#include "contour/runtime.hpp"

#include <malloc.h>

namespace contour {

void tune_allocator() {
  constexpr int kOneGiB = 1 << 30;
  mallopt(M_MMAP_THRESHOLD, kOneGiB);
  mallopt(M_TRIM_THRESHOLD, kOneGiB);
}

}  // namespace contour
