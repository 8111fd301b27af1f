#pragma once

// The training loops allocate and free many multi-megabyte tensors per step.
// glibc would otherwise hand each one to mmap and give it back right away,
// which costs more than the arithmetic at these sizes.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace obsnet {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace obsnet
