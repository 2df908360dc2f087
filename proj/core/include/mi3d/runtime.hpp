#pragma once

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mi3d {

// Training steps churn multi-megabyte tensor buffers. With glibc defaults
// those are returned to the kernel on every free and faulted back in on
// the next step, which roughly doubles step time. Call once at process
// start to keep them on the heap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace mi3d
