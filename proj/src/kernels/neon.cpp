// NEON kernels for AArch64: 8x8 tile in 16 q-registers, 2+2 registers for the
// current Ar column / Br row and 2+2 more for the one loaded ahead.
// Multiply and add stay separate (no vfmaq) to match the scalar reference.

#include <arm_neon.h>

#include "tables.hpp"
#include "tile_common.hpp"

namespace fuseconv::simd {
namespace {

#define FC_NEON_UPDATE(j, bvec, l)                                              \
    do {                                                                        \
        c##j##0 = vaddq_f32(c##j##0, vmulq_laneq_f32(a0, bvec, l));             \
        c##j##1 = vaddq_f32(c##j##1, vmulq_laneq_f32(a1, bvec, l));             \
    } while (0)

#define FC_NEON_RANK1()                                                         \
    do {                                                                        \
        FC_NEON_UPDATE(0, b0, 0);                                               \
        FC_NEON_UPDATE(1, b0, 1);                                               \
        FC_NEON_UPDATE(2, b0, 2);                                               \
        FC_NEON_UPDATE(3, b0, 3);                                               \
        FC_NEON_UPDATE(4, b1, 0);                                               \
        FC_NEON_UPDATE(5, b1, 1);                                               \
        FC_NEON_UPDATE(6, b1, 2);                                               \
        FC_NEON_UPDATE(7, b1, 3);                                               \
    } while (0)

inline float32x4_t relu_vec(float32x4_t v) {
    const float32x4_t zero = vdupq_n_f32(0.0f);
    return vbslq_f32(vcgtq_f32(v, zero), v, zero);
}

inline float32x4_t epilogue_vec(float32x4_t v, const TileEpilogue& ep, std::size_t row) {
    switch (ep.kind) {
    case EpilogueKind::None:
        return v;
    case EpilogueKind::Relu:
        return relu_vec(v);
    case EpilogueKind::BatchNorm:
        return vaddq_f32(vmulq_f32(vld1q_f32(ep.scale + row), v), vld1q_f32(ep.shift + row));
    case EpilogueKind::BatchNormRelu:
        return relu_vec(vaddq_f32(vmulq_f32(vld1q_f32(ep.scale + row), v), vld1q_f32(ep.shift + row)));
    }
    return v;
}

inline void store_column(float* p, float32x4_t lo, float32x4_t hi, bool accumulate, const TileEpilogue& ep) {
    if (accumulate) {
        lo = vaddq_f32(vld1q_f32(p), lo);
        hi = vaddq_f32(vld1q_f32(p + 4), hi);
    }
    vst1q_f32(p, epilogue_vec(lo, ep, 0));
    vst1q_f32(p + 4, epilogue_vec(hi, ep, 4));
}

void gemm_8x8(std::size_t kc, const float* a, const float* b, float* c, std::size_t rs, std::size_t cs,
              std::size_t mr, std::size_t nr, bool accumulate, TileEpilogue ep) {
    const float32x4_t z = vdupq_n_f32(0.0f);
    float32x4_t c00 = z, c01 = z, c10 = z, c11 = z, c20 = z, c21 = z, c30 = z, c31 = z;
    float32x4_t c40 = z, c41 = z, c50 = z, c51 = z, c60 = z, c61 = z, c70 = z, c71 = z;

    if (kc > 0) {
        float32x4_t a0 = vld1q_f32(a), a1 = vld1q_f32(a + 4);
        float32x4_t b0 = vld1q_f32(b), b1 = vld1q_f32(b + 4);
        for (std::size_t k = 0; k + 1 < kc; ++k) {
            const float* an = a + (k + 1) * kMr;
            const float* bn = b + (k + 1) * kNr;
            const float32x4_t na0 = vld1q_f32(an), na1 = vld1q_f32(an + 4);
            const float32x4_t nb0 = vld1q_f32(bn), nb1 = vld1q_f32(bn + 4);
            FC_NEON_RANK1();
            a0 = na0;
            a1 = na1;
            b0 = nb0;
            b1 = nb1;
        }
        FC_NEON_RANK1();
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
    float acc[kMr * kNr];
    const float32x4_t cols[16] = {c00, c01, c10, c11, c20, c21, c30, c31, c40, c41, c50, c51, c60, c61, c70, c71};
    for (int v = 0; v < 16; ++v) vst1q_f32(acc + 4 * v, cols[v]);
    store_tile(acc, c, rs, cs, mr, nr, accumulate, ep);
}

#undef FC_NEON_RANK1
#undef FC_NEON_UPDATE

void affine_channels(const float* x, float* y, std::size_t pixels, std::size_t channels, const float* scale,
                     const float* shift) {
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* xp = x + p * channels;
        float* yp = y + p * channels;
        std::size_t ch = 0;
        for (; ch + 4 <= channels; ch += 4)
            vst1q_f32(yp + ch, vaddq_f32(vmulq_f32(vld1q_f32(scale + ch), vld1q_f32(xp + ch)), vld1q_f32(shift + ch)));
        affine_tail(xp, yp, ch, channels, scale, shift);
    }
}

void relu(const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, relu_vec(vld1q_f32(x + i)));
    for (; i < n; ++i) y[i] = relu_scalar(x[i]);
}

void add(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

}  // namespace

const KernelTable& neon_kernels() {
    static const KernelTable table{Isa::Neon, "neon", gemm_8x8, affine_channels, relu, add};
    return table;
}

}  // namespace fuseconv::simd
