// 4-lane kernels for the x86-64 baseline. The 8x8 micro-tile lives in 16
// four-wide accumulators; a column of Ar and a row of Br take 2+2 registers
// and the next column/row is loaded one iteration ahead.

#include <immintrin.h>

#include "tables.hpp"
#include "tile_common.hpp"

namespace fuseconv::simd {
namespace {

template <int Lane>
inline __m128 lane(__m128 v) {
    return _mm_shuffle_ps(v, v, _MM_SHUFFLE(Lane, Lane, Lane, Lane));
}

#define FC_SSE_UPDATE(j, bvec, l)                                          \
    do {                                                                   \
        const __m128 bj = lane<l>(bvec);                                   \
        c##j##0 = _mm_add_ps(c##j##0, _mm_mul_ps(a0, bj));                 \
        c##j##1 = _mm_add_ps(c##j##1, _mm_mul_ps(a1, bj));                 \
    } while (0)

#define FC_SSE_RANK1()                                                     \
    do {                                                                   \
        FC_SSE_UPDATE(0, b0, 0);                                           \
        FC_SSE_UPDATE(1, b0, 1);                                           \
        FC_SSE_UPDATE(2, b0, 2);                                           \
        FC_SSE_UPDATE(3, b0, 3);                                           \
        FC_SSE_UPDATE(4, b1, 0);                                           \
        FC_SSE_UPDATE(5, b1, 1);                                           \
        FC_SSE_UPDATE(6, b1, 2);                                           \
        FC_SSE_UPDATE(7, b1, 3);                                           \
    } while (0)

inline __m128 epilogue_vec(__m128 v, const TileEpilogue& ep, std::size_t row) {
    const __m128 zero = _mm_setzero_ps();
    switch (ep.kind) {
    case EpilogueKind::None:
        return v;
    case EpilogueKind::Relu:
        return _mm_max_ps(v, zero);
    case EpilogueKind::BatchNorm:
        return _mm_add_ps(_mm_mul_ps(_mm_loadu_ps(ep.scale + row), v), _mm_loadu_ps(ep.shift + row));
    case EpilogueKind::BatchNormRelu:
        return _mm_max_ps(_mm_add_ps(_mm_mul_ps(_mm_loadu_ps(ep.scale + row), v), _mm_loadu_ps(ep.shift + row)),
                          zero);
    }
    return v;
}

inline void store_column(float* p, __m128 lo, __m128 hi, bool accumulate, const TileEpilogue& ep) {
    if (accumulate) {
        lo = _mm_add_ps(_mm_loadu_ps(p), lo);
        hi = _mm_add_ps(_mm_loadu_ps(p + 4), hi);
    }
    _mm_storeu_ps(p, epilogue_vec(lo, ep, 0));
    _mm_storeu_ps(p + 4, epilogue_vec(hi, ep, 4));
}

void gemm_8x8(std::size_t kc, const float* a, const float* b, float* c, std::size_t rs, std::size_t cs,
              std::size_t mr, std::size_t nr, bool accumulate, TileEpilogue ep) {
    __m128 c00 = _mm_setzero_ps(), c01 = _mm_setzero_ps(), c10 = _mm_setzero_ps(), c11 = _mm_setzero_ps();
    __m128 c20 = _mm_setzero_ps(), c21 = _mm_setzero_ps(), c30 = _mm_setzero_ps(), c31 = _mm_setzero_ps();
    __m128 c40 = _mm_setzero_ps(), c41 = _mm_setzero_ps(), c50 = _mm_setzero_ps(), c51 = _mm_setzero_ps();
    __m128 c60 = _mm_setzero_ps(), c61 = _mm_setzero_ps(), c70 = _mm_setzero_ps(), c71 = _mm_setzero_ps();

    if (kc > 0) {
        __m128 a0 = _mm_loadu_ps(a), a1 = _mm_loadu_ps(a + 4);
        __m128 b0 = _mm_loadu_ps(b), b1 = _mm_loadu_ps(b + 4);
        for (std::size_t k = 0; k + 1 < kc; ++k) {
            const float* an = a + (k + 1) * kMr;
            const float* bn = b + (k + 1) * kNr;
            const __m128 na0 = _mm_loadu_ps(an), na1 = _mm_loadu_ps(an + 4);
            const __m128 nb0 = _mm_loadu_ps(bn), nb1 = _mm_loadu_ps(bn + 4);
            FC_SSE_RANK1();
            a0 = na0;
            a1 = na1;
            b0 = nb0;
            b1 = nb1;
        }
        FC_SSE_RANK1();
    }

    if (mr == kMr && nr == kNr && rs == 1) {
        store_column(c + 0 * cs, c00, c01, accumulate, ep);
        store_column(c + 1 * cs, c10, c11, accumulate, ep);
        store_column(c + 2 * cs, c20, c21, accumulate, ep);
        store_column(c + 3 * cs, c30, c31, accumulate, ep);
        store_column(c + 4 * cs, c40, c41, accumulate, ep);
        store_column(c + 5 * cs, c50, c51, accumulate, ep);
        store_column(c + 6 * cs, c60, c61, accumulate, ep);
        store_column(c + 7 * cs, c70, c71, accumulate, ep);
        return;
    }
    alignas(16) float acc[kMr * kNr];
    const __m128 cols[16] = {c00, c01, c10, c11, c20, c21, c30, c31, c40, c41, c50, c51, c60, c61, c70, c71};
    for (int v = 0; v < 16; ++v) _mm_store_ps(acc + 4 * v, cols[v]);
    store_tile(acc, c, rs, cs, mr, nr, accumulate, ep);
}

#undef FC_SSE_RANK1
#undef FC_SSE_UPDATE

void affine_channels(const float* x, float* y, std::size_t pixels, std::size_t channels, const float* scale,
                     const float* shift) {
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* xp = x + p * channels;
        float* yp = y + p * channels;
        std::size_t ch = 0;
        for (; ch + 4 <= channels; ch += 4)
            _mm_storeu_ps(yp + ch, _mm_add_ps(_mm_mul_ps(_mm_loadu_ps(scale + ch), _mm_loadu_ps(xp + ch)),
                                              _mm_loadu_ps(shift + ch)));
        affine_tail(xp, yp, ch, channels, scale, shift);
    }
}

void relu(const float* x, float* y, std::size_t n) {
    const __m128 zero = _mm_setzero_ps();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm_storeu_ps(y + i, _mm_max_ps(_mm_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = relu_scalar(x[i]);
}

void add(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm_storeu_ps(y + i, _mm_add_ps(_mm_loadu_ps(a + i), _mm_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

}  // namespace

const KernelTable& sse_kernels() {
    static const KernelTable table{Isa::Sse, "sse", gemm_8x8, affine_channels, relu, add};
    return table;
}

}  // namespace fuseconv::simd
