// Reference kernels. Built with auto-vectorization disabled so the table
// stays a true scalar baseline.

#include "tables.hpp"
#include "tile_common.hpp"

namespace fuseconv::simd {
namespace {

void gemm_8x8(std::size_t kc, const float* a, const float* b, float* c, std::size_t rs, std::size_t cs,
              std::size_t mr, std::size_t nr, bool accumulate, TileEpilogue ep) {
    float acc[kMr * kNr] = {};
    for (std::size_t k = 0; k < kc; ++k) {
        const float* ak = a + k * kMr;
        const float* bk = b + k * kNr;
        for (std::size_t j = 0; j < kNr; ++j) {
            const float bj = bk[j];
            for (std::size_t i = 0; i < kMr; ++i) acc[j * kMr + i] += ak[i] * bj;
        }
    }
    store_tile(acc, c, rs, cs, mr, nr, accumulate, ep);
}

void affine_channels(const float* x, float* y, std::size_t pixels, std::size_t channels, const float* scale,
                     const float* shift) {
    for (std::size_t p = 0; p < pixels; ++p) affine_tail(x + p * channels, y + p * channels, 0, channels, scale, shift);
}

void relu(const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = relu_scalar(x[i]);
}

void add(const float* a, const float* b, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Isa::Scalar, "scalar", gemm_8x8, affine_channels, relu, add};
    return table;
}

}  // namespace fuseconv::simd
