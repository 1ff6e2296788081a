#pragma once

// Shared scalar pieces of every kernel table. Internal linkage only: this
// header is included by translation units built with different ISA flags.

#include <cstddef>

#include "fuseconv/kernel_abi.hpp"

namespace fuseconv::simd {
namespace {

inline float relu_scalar(float v) { return v > 0.0f ? v : 0.0f; }

inline float epilogue_scalar(float v, const TileEpilogue& ep, std::size_t row) {
    switch (ep.kind) {
    case EpilogueKind::None:
        return v;
    case EpilogueKind::Relu:
        return relu_scalar(v);
    case EpilogueKind::BatchNorm:
        return ep.scale[row] * v + ep.shift[row];
    case EpilogueKind::BatchNormRelu:
        return relu_scalar(ep.scale[row] * v + ep.shift[row]);
    }
    return v;
}

/// Writes a column-major 8x8 accumulator tile into C, masked to mr x nr.
inline void store_tile(const float* acc, float* c, std::size_t rs, std::size_t cs, std::size_t mr, std::size_t nr,
                       bool accumulate, const TileEpilogue& ep) {
    for (std::size_t j = 0; j < nr; ++j) {
        for (std::size_t i = 0; i < mr; ++i) {
            float* p = c + i * rs + j * cs;
            const float v = accumulate ? *p + acc[j * kMr + i] : acc[j * kMr + i];
            *p = epilogue_scalar(v, ep, i);
        }
    }
}

inline void affine_tail(const float* x, float* y, std::size_t from, std::size_t channels, const float* scale,
                        const float* shift) {
    for (std::size_t ch = from; ch < channels; ++ch) y[ch] = scale[ch] * x[ch] + shift[ch];
}

}  // namespace
}  // namespace fuseconv::simd
