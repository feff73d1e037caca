#pragma once

// Process-level tuning for the experiment executables.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gtnn {

/// Training allocates and frees the same large matrices every epoch. Keeps
/// glibc from returning that memory to the kernel between epochs.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace gtnn
