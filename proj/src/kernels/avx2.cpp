// 8-lane kernels, built with -mavx2 and only called after a CPUID check.
// Keep this file free of standard-library headers: inline functions emitted
// here with AVX2 encodings could otherwise be picked by the linker for
// callers on older CPUs.

#include <immintrin.h>

#include "tables.hpp"
#include "tile_common.hpp"

namespace fuseconv::simd {
namespace {

// Each Br row is held as two in-lane duplicated halves ([b0..b3|b0..b3] and
// [b4..b7|b4..b7]) so one shuffle broadcasts any element.
template <int Lane>
inline __m256 lane(__m256 v) {
    return _mm256_shuffle_ps(v, v, _MM_SHUFFLE(Lane, Lane, Lane, Lane));
}

inline __m256 load_half(const float* p) { return _mm256_broadcast_ps(reinterpret_cast<const __m128*>(p)); }

#define FC_AVX2_RANK1()                                           \
    do {                                                          \
        c0 = _mm256_add_ps(c0, _mm256_mul_ps(av, lane<0>(blo)));  \
        c1 = _mm256_add_ps(c1, _mm256_mul_ps(av, lane<1>(blo)));  \
        c2 = _mm256_add_ps(c2, _mm256_mul_ps(av, lane<2>(blo)));  \
        c3 = _mm256_add_ps(c3, _mm256_mul_ps(av, lane<3>(blo)));  \
        c4 = _mm256_add_ps(c4, _mm256_mul_ps(av, lane<0>(bhi)));  \
        c5 = _mm256_add_ps(c5, _mm256_mul_ps(av, lane<1>(bhi)));  \
        c6 = _mm256_add_ps(c6, _mm256_mul_ps(av, lane<2>(bhi)));  \
        c7 = _mm256_add_ps(c7, _mm256_mul_ps(av, lane<3>(bhi)));  \
    } while (0)

inline __m256 epilogue_vec(__m256 v, const TileEpilogue& ep) {
    const __m256 zero = _mm256_setzero_ps();
    switch (ep.kind) {
    case EpilogueKind::None:
        return v;
    case EpilogueKind::Relu:
        return _mm256_max_ps(v, zero);
    case EpilogueKind::BatchNorm:
        return _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(ep.scale), v), _mm256_loadu_ps(ep.shift));
    case EpilogueKind::BatchNormRelu:
        return _mm256_max_ps(_mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(ep.scale), v), _mm256_loadu_ps(ep.shift)),
                             zero);
    }
    return v;
}

inline void store_column(float* p, __m256 v, bool accumulate, const TileEpilogue& ep) {
    if (accumulate) v = _mm256_add_ps(_mm256_loadu_ps(p), v);
    _mm256_storeu_ps(p, epilogue_vec(v, ep));
}

void gemm_8x8(std::size_t kc, const float* a, const float* b, float* c, std::size_t rs, std::size_t cs,
              std::size_t mr, std::size_t nr, bool accumulate, TileEpilogue ep) {
    __m256 c0 = _mm256_setzero_ps(), c1 = _mm256_setzero_ps(), c2 = _mm256_setzero_ps(), c3 = _mm256_setzero_ps();
    __m256 c4 = _mm256_setzero_ps(), c5 = _mm256_setzero_ps(), c6 = _mm256_setzero_ps(), c7 = _mm256_setzero_ps();

    if (kc > 0) {
        __m256 av = _mm256_loadu_ps(a);
        __m256 blo = load_half(b), bhi = load_half(b + 4);
        for (std::size_t k = 0; k + 1 < kc; ++k) {
            const float* an = a + (k + 1) * kMr;
            const float* bn = b + (k + 1) * kNr;
            const __m256 nav = _mm256_loadu_ps(an);
            const __m256 nblo = load_half(bn), nbhi = load_half(bn + 4);
            FC_AVX2_RANK1();
            av = nav;
            blo = nblo;
            bhi = nbhi;
        }
        FC_AVX2_RANK1();
    }

    if (mr == kMr && nr == kNr && rs == 1) {
        store_column(c + 0 * cs, c0, accumulate, ep);
        store_column(c + 1 * cs, c1, accumulate, ep);
        store_column(c + 2 * cs, c2, accumulate, ep);
        store_column(c + 3 * cs, c3, accumulate, ep);
        store_column(c + 4 * cs, c4, accumulate, ep);
        store_column(c + 5 * cs, c5, accumulate, ep);
        store_column(c + 6 * cs, c6, accumulate, ep);
        store_column(c + 7 * cs, c7, accumulate, ep);
        return;
    }
    alignas(32) float acc[kMr * kNr];
    _mm256_store_ps(acc + 0 * kMr, c0);
    _mm256_store_ps(acc + 1 * kMr, c1);
    _mm256_store_ps(acc + 2 * kMr, c2);
    _mm256_store_ps(acc + 3 * kMr, c3);
    _mm256_store_ps(acc + 4 * kMr, c4);
    _mm256_store_ps(acc + 5 * kMr, c5);
    _mm256_store_ps(acc + 6 * kMr, c6);
    _mm256_store_ps(acc + 7 * kMr, c7);
    store_tile(acc, c, rs, cs, mr, nr, accumulate, ep);
}

#undef FC_AVX2_RANK1

void affine_channels(const float* x, float* y, std::size_t pixels, std::size_t channels, const float* scale,
                     const float* shift) {
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* xp = x + p * channels;
        float* yp = y + p * channels;
        std::size_t ch = 0;
        for (; ch + 8 <= channels; ch += 8)
            _mm256_storeu_ps(yp + ch, _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(scale + ch), _mm256_loadu_ps(xp + ch)),
                                                    _mm256_loadu_ps(shift + ch)));
        affine_tail(xp, yp, ch, channels, scale, shift);
    }
}

void relu(const float* x, float* y, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = relu_scalar(x[i]);
}

void add(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

}  // namespace

const KernelTable& avx2_kernels() {
    static const KernelTable table{Isa::Avx2, "avx2", gemm_8x8, affine_channels, relu, add};
    return table;
}

}  // namespace fuseconv::simd
