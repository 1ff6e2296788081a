#pragma once

// Convolution lowered to GEMM. With activations in NHWC and filters in
// (cout, kh, kw, cin):
//
//   A = filter matrix, m x k row-major (m = cout, k = kh*kw*cin)
//   B = im2col matrix, k x n           (n = t*ho*wo)
//   C = output, m x n, aliased onto the NHWC output (row stride 1, column
//       stride cout), so C row i is output channel i.
//
// Row p of B decomposes as p = (r*kw + s)*cin + ci and column q as
// q = (b*ho + oh)*wo + ow; B(p, q) = x[b, oh*sh - ph + r, ow*sw - pw + s, ci],
// or 0 when that position lies in the padding.
//
// conv_im2col_gemm materialises B. conv_gemm never does: the B packing
// routine gathers each kc x nc block straight from x through per-column
// index tables.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fuseconv/gemm.hpp"
#include "fuseconv/tensor.hpp"

namespace fuseconv {

enum class ConvAlgorithm { Im2colGemm, ConvGemm };

std::string to_string(ConvAlgorithm a);
/// Accepts "im2col" / "im2colgemm" and "convgemm" in any case.
ConvAlgorithm parse_algorithm(const std::string& text);

/// im2col matrix defined by its index mapping alone.
class Im2colMapping {
public:
    /// Throws GeometryError for an invalid geometry.
    Im2colMapping(const Shape& input, const ConvDescriptor& d);

    std::size_t rows() const noexcept { return geom_.k; }
    std::size_t cols() const noexcept { return geom_.n; }
    const ConvGeometry& geometry() const noexcept { return geom_; }
    const ConvDescriptor& descriptor() const noexcept { return d_; }
    const Shape& input_shape() const noexcept { return in_; }

    /// NHWC offset into the input of element (p, q), or -1 for padding.
    std::int64_t source(std::size_t p, std::size_t q) const noexcept;

private:
    Shape in_;
    ConvDescriptor d_;
    ConvGeometry geom_;
};

/// Materialised im2col matrix, k x n stored column-major.
class Im2colMatrix {
public:
    Im2colMatrix() = default;
    Im2colMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    float operator()(std::size_t p, std::size_t q) const noexcept { return data_[q * rows_ + p]; }
    std::span<const float> data() const noexcept { return data_; }
    ConstMatrixView view() const { return ConstMatrixView::col_major(data_, rows_, cols_); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline constexpr std::size_t kUnlimitedBytes = std::numeric_limits<std::size_t>::max();

/// Bytes of the full im2col matrix for this convolution.
std::size_t im2col_bytes(const ConvDescriptor& d, const Shape& input);

/// Throws AllocationError carrying the buffer size when it exceeds
/// `budget_bytes` or cannot be allocated.
Im2colMatrix im2col(const Tensor& x, const ConvDescriptor& d, int threads = 1,
                    std::size_t budget_bytes = kUnlimitedBytes);

/// Fills `out` (k*n floats, column-major) with the im2col matrix.
void im2col_into(const Tensor& x, const ConvDescriptor& d, std::span<float> out, int threads = 1);

struct ConvOptions {
    GemmCacheParams params{};
    LoopVariant variant = LoopVariant::A2B1;
    /// Coefficients are per output channel.
    Epilogue epilogue{};
    int threads = 1;
    simd::Isa isa = simd::best_isa();
    const CacheHierarchy* hw = nullptr;
    GemmStats* stats = nullptr;
    /// Upper bound for the materialised im2col matrix.
    std::size_t im2col_budget_bytes = kUnlimitedBytes;
};

/// Output tensor shape (t, ho, wo, cout); checks x, w and d agree.
Shape conv_output_shape(const Tensor& x, const Tensor& w, const ConvDescriptor& d);

Tensor conv_im2col_gemm(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt);
Tensor conv_gemm(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt);

/// Writes into a preallocated y. `workspace` is grown to the im2col size when
/// needed; a 1x1, stride 1, unpadded convolution reads x in place and leaves
/// it untouched.
void conv_im2col_gemm_into(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt,
                           std::vector<float>& workspace, Tensor& y);
void conv_gemm_into(const Tensor& x, const Tensor& w, const ConvDescriptor& d, const ConvOptions& opt, Tensor& y);

Tensor convolve(ConvAlgorithm algo, const Tensor& x, const Tensor& w, const ConvDescriptor& d,
                const ConvOptions& opt);

/// Im2colGemm for 1x1 kernels with at most kIm2colMaxCout output channels,
/// ConvGemm otherwise.
inline constexpr std::size_t kIm2colMaxCout = 128;
ConvAlgorithm choose_algorithm(const ConvDescriptor& d, const Shape& input);

}  // namespace fuseconv
