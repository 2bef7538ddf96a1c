#pragma once

// glibc allocator settings for training workloads: keep large activation
// buffers on the heap instead of fresh mmap pages on every batch.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace eegatt {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace eegatt
