#pragma once

// Plain types shared by every kernel table. Only <cstddef> here: the vector
// kernel translation units are compiled with ISA flags and must not pull in
// inline library code.

#include <cstddef>

namespace fuseconv::simd {

/// Register block of the GEMM micro-kernel.
inline constexpr std::size_t kMr = 8;
inline constexpr std::size_t kNr = 8;

enum class EpilogueKind { None, Relu, BatchNorm, BatchNormRelu };

/// Post-operation for one micro-tile. `scale`/`shift` point at the
/// coefficients of the tile's first row (GEMM row == output channel).
struct TileEpilogue {
    EpilogueKind kind = EpilogueKind::None;
    const float* scale = nullptr;
    const float* shift = nullptr;
};

/// Cr (mr_eff x nr_eff, strided by rs/cs) = [Cr +] Ar * Br, then the epilogue.
/// `a` is an 8-row micro-panel stored column by column, `b` an 8-column
/// micro-panel stored row by row, both kc long and zero padded.
using MicroKernelFn = void (*)(std::size_t kc, const float* a, const float* b, float* c, std::size_t rs,
                               std::size_t cs, std::size_t mr_eff, std::size_t nr_eff, bool accumulate,
                               TileEpilogue ep);

/// y[p*channels + ch] = scale[ch] * x[p*channels + ch] + shift[ch]
using AffineFn = void (*)(const float* x, float* y, std::size_t pixels, std::size_t channels, const float* scale,
                          const float* shift);
/// y = x > 0 ? x : 0
using ReluFn = void (*)(const float* x, float* y, std::size_t n);
/// y = a + b
using AddFn = void (*)(const float* a, const float* b, float* y, std::size_t n);

enum class Isa { Scalar, Sse, Avx2, Neon };

struct KernelTable {
    Isa isa;
    const char* name;
    MicroKernelFn gemm_8x8;
    AffineFn affine_channels;
    ReluFn relu;
    AddFn add;
};

}  // namespace fuseconv::simd
