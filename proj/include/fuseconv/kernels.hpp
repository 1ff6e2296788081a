#pragma once

// Inner-loop kernels: one scalar reference table plus vector tables
// (SSE and AVX2 on x86-64, NEON on AArch64) chosen at runtime.
//
// Every table computes the same sequence of IEEE single-precision operations
// per output element (no fused multiply-add), so all tables produce
// bitwise-identical results. The tests rely on this.

#include <string>
#include <vector>

#include "fuseconv/kernel_abi.hpp"

namespace fuseconv::simd {

/// Table for `isa`, or nullptr when it is not compiled in or the CPU lacks it.
const KernelTable* find_kernels(Isa isa);

/// Table for `isa`; throws ConfigError when unavailable.
const KernelTable& kernels(Isa isa);

/// Every ISA usable on this machine, scalar first.
std::vector<Isa> available_isas();

/// Widest ISA usable on this machine.
Isa best_isa();

std::string to_string(Isa isa);
/// Accepts "scalar", "sse", "avx2", "neon" and "auto" (best_isa()).
Isa parse_isa(const std::string& name);

}  // namespace fuseconv::simd
