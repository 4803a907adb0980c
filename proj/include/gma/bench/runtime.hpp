#pragma once

#include <malloc.h>

namespace gma::bench {

inline constexpr const char* kCodeVersion = "1.0.0";

/// Keeps freed training buffers in the heap instead of returning them to the kernel on every
/// update; the default thresholds make the allocator spend most of its time in page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 26);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);
#endif
}

}  // namespace gma::bench
