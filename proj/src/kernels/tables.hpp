#pragma once

#include "fuseconv/kernel_abi.hpp"

namespace fuseconv::simd {

const KernelTable& scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& sse_kernels();
const KernelTable& avx2_kernels();
#endif
#if defined(__aarch64__)
const KernelTable& neon_kernels();
#endif

}  // namespace fuseconv::simd
