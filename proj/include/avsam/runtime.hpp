#pragma once

#if defined(__GLIBC__) || __has_include(<malloc.h>)
#include <malloc.h>
#endif

#include <cblas.h>

namespace avsam::runtime {

/// Keeps large freed blocks on the heap instead of returning them to the OS.
/// Training allocates and frees the same multi-megabyte buffers every step;
/// without this each step pays fresh page faults.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

/// The matrices here are small; one BLAS thread is as fast and keeps the
/// summation order, and with it every result, independent of core count.
inline void init() {
  tune_allocator();
  openblas_set_num_threads(1);
}

}  // namespace avsam::runtime
