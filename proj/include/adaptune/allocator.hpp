#pragma once

// glibc returns large blocks to the kernel on every free, which makes the
// per-step tensor churn of training pay page faults; keep them in the heap.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace adaptune {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace adaptune
